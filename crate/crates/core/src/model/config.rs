use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of one BERT-style sub-encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_p: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 4,
            d: 64,
            n_heads: 4,
            d_ffn: 256,
            vocab_size: 2048,
            max_seq_len: 32,
            dropout_p: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 || self.d == 0 || self.d_ffn == 0 {
            return fail(format!("degenerate encoder geometry {self:?}"));
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d = {} is not divisible by n_heads = {}",
                self.d, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p = {} outside [0, 1)", self.dropout_p));
        }
        if self.vocab_size < 5 {
            return fail(format!(
                "vocab_size = {} is below the reserved minimum",
                self.vocab_size
            ));
        }
        if self.max_seq_len < 3 {
            return fail(format!(
                "max_seq_len = {} must be at least 3",
                self.max_seq_len
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}
