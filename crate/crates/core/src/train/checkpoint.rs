//! Binary checkpoint container: an 8-byte magic, a little-endian `u64`
//! header length, a JSON header (config, vocabulary, array manifest), then
//! every array as little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cross::TwinModel;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::infer::Model;
use crate::model::{EncoderConfig, EncoderWeights};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"JTCSECK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub model: Model,
    pub vocab: Vocab,
    pub best_spearman: f64,
    pub step: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    config: EncoderConfig,
    cael_interval: Option<usize>,
    best_spearman: f64,
    step: usize,
    vocab: Vec<String>,
    arrays: Vec<ArrayEntry>,
}

fn towers(model: &Model) -> Vec<(&'static str, &EncoderWeights)> {
    match model {
        Model::Twin(t) => vec![("I", &t.encoder_i), ("II", &t.encoder_ii)],
        Model::Single(w) => vec![("student", w)],
    }
}

impl CheckpointBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload: Vec<&Tensor> = Vec::new();
        for (tower, w) in towers(&self.model) {
            for (name, t) in w.named_params() {
                arrays.push(ArrayEntry {
                    name: format!("{tower}.{name}"),
                    shape: t.shape().to_vec(),
                });
                payload.push(t);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.model.kind().to_string(),
            config: *self.model.config(),
            cael_interval: match &self.model {
                Model::Twin(t) => Some(t.placement.k),
                Model::Single(_) => None,
            },
            best_spearman: self.best_spearman,
            step: self.step,
            vocab: self.vocab.tokens().to_vec(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Contract {
            op: "checkpoint",
            detail: e.to_string(),
        })?;
        let n_values: usize = payload.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.config.validate().map_err(|e| bad(e.to_string()))?;
        let vocab = Vocab::from_tokens(header.vocab).map_err(|e| bad(e.to_string()))?;

        let mut model = match (header.kind.as_str(), header.cael_interval) {
            ("twin", Some(k)) => {
                let skeleton = EncoderWeights::init(&header.config, 0)?;
                Model::Twin(
                    TwinModel::new(skeleton.clone(), skeleton, k)
                        .map_err(|e| bad(e.to_string()))?,
                )
            }
            ("single", None) => Model::Single(EncoderWeights::init(&header.config, 0)?),
            (kind, k) => return Err(bad(format!("unknown model kind {kind} (interval {k:?})"))),
        };
        let mut data = &bytes[16 + hlen..];
        let mut entries = header.arrays.iter();
        let tower_list: Vec<&mut EncoderWeights> = match &mut model {
            Model::Twin(t) => vec![&mut t.encoder_i, &mut t.encoder_ii],
            Model::Single(w) => vec![w],
        };
        for w in tower_list {
            for t in w.params_mut() {
                let entry = entries
                    .next()
                    .ok_or_else(|| bad("array manifest too short".into()))?;
                if entry.shape != t.shape() {
                    return Err(bad(format!(
                        "array {} has shape {:?}, expected {:?}",
                        entry.name,
                        entry.shape,
                        t.shape()
                    )));
                }
                let need = 8 * t.len();
                if data.len() < need {
                    return Err(bad(format!("truncated data for array {}", entry.name)));
                }
                for (v, chunk) in t.values_mut().iter_mut().zip(data[..need].chunks_exact(8)) {
                    *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
                data = &data[need..];
            }
        }
        if entries.next().is_some() || !data.is_empty() {
            return Err(bad("trailing arrays or bytes".into()));
        }
        Ok(CheckpointBundle {
            model,
            vocab,
            best_spearman: header.best_spearman,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_bytes(&bytes, path)
    }
}
