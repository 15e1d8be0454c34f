use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderConfig, INIT_STD};
use crate::error::Result;
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;

/// Parameters of one encoder layer. Projection matrices are stored
/// `[in x out]` so a layer computes `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_in_w: Tensor,
    pub ffn_in_b: Tensor,
    pub ffn_out_w: Tensor,
    pub ffn_out_b: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub token_embeddings: Tensor,
    pub position_embeddings: Tensor,
    pub layers: Vec<LayerWeights>,
    pub pooler_w: Tensor,
    pub pooler_b: Tensor,
}

/// Normal(0, std) resampled until it falls within two standard deviations.
fn truncated_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut t = Tensor::zeros(shape);
    for v in t.values_mut() {
        *v = loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        };
    }
    t
}

impl LayerWeights {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (cfg.d, cfg.d_ffn);
        LayerWeights {
            wq: truncated_normal(&[d, d], rng),
            bq: Tensor::zeros(&[d]),
            wk: truncated_normal(&[d, d], rng),
            bk: Tensor::zeros(&[d]),
            wv: truncated_normal(&[d, d], rng),
            bv: Tensor::zeros(&[d]),
            wo: truncated_normal(&[d, d], rng),
            bo: Tensor::zeros(&[d]),
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ffn_in_w: truncated_normal(&[d, f], rng),
            ffn_in_b: Tensor::zeros(&[f]),
            ffn_out_w: truncated_normal(&[f, d], rng),
            ffn_out_b: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ffn_in_w", &self.ffn_in_w),
            ("ffn_in_b", &self.ffn_in_b),
            ("ffn_out_w", &self.ffn_out_w),
            ("ffn_out_b", &self.ffn_out_b),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ffn_in_w,
            &mut self.ffn_in_b,
            &mut self.ffn_out_w,
            &mut self.ffn_out_b,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

impl EncoderWeights {
    /// Truncated-normal matrices (std 0.02), unit layer-norm gains, zero
    /// biases. Deterministic per seed.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, &[stream::INIT]);
        let token_embeddings = truncated_normal(&[cfg.vocab_size, cfg.d], &mut rng);
        let position_embeddings = truncated_normal(&[cfg.max_seq_len, cfg.d], &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights::init(cfg, &mut rng))
            .collect();
        let pooler_w = truncated_normal(&[cfg.d, cfg.d], &mut rng);
        // keep the generator's position independent of later additions
        let _ = rng.random::<u64>();
        Ok(EncoderWeights {
            config: *cfg,
            token_embeddings,
            position_embeddings,
            layers,
            pooler_w,
            pooler_b: Tensor::zeros(&[cfg.d]),
        })
    }

    /// Every parameter with a stable name, in a fixed order shared with
    /// [`EncoderWeights::params_mut`] and the graph binding.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("pooler_w".to_string(), &self.pooler_w));
        out.push(("pooler_b".to_string(), &self.pooler_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embeddings, &mut self.position_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.pooler_w);
        out.push(&mut self.pooler_b);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}
