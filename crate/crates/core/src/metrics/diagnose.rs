use std::path::Path;

use serde::Serialize;

use super::rank::spearman;
use crate::cross::cls_energy_lenient;
use crate::data::{Batch, StsExample, Vocab};
use crate::error::{Error, Result};
use crate::infer::{sts_spearman, Model, EMBED_CHUNK};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionEntry {
    pub tower: String,
    /// 1-based layer index.
    pub layer: usize,
    pub example: usize,
    /// Head-averaged `[len x len]` attention over the unpadded tokens.
    pub head_avg: Vec<Vec<f64>>,
    /// Total attention each key column receives.
    pub column_sums: Vec<f64>,
    /// Per-head matrices, only when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEntry {
    pub tower: String,
    pub layer: usize,
    pub example: usize,
    /// `None` when the example has no non-CLS tokens.
    pub e_cls: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionDump {
    pub tokens: Vec<Vec<String>>,
    pub attention: Vec<AttentionEntry>,
    pub e_cls: Vec<EnergyEntry>,
}

/// Inference-mode attention maps and E_CLS for every tower and layer.
pub fn attention_dump(
    model: &Model,
    vocab: &Vocab,
    batch: &Batch,
    per_head: bool,
) -> Result<AttentionDump> {
    let lengths = batch.lengths();
    let n = batch.seq_len();
    let tokens = (0..batch.batch_size())
        .map(|b| {
            vocab
                .detokenize(&batch.row_ids(b)[..lengths[b]])
                .into_iter()
                .map(str::to_string)
                .collect()
        })
        .collect();
    let mut attention = Vec::new();
    let mut e_cls = Vec::new();
    for (tower, out) in model.tower_outputs(batch)? {
        for (l, sa) in out.attention.iter().enumerate() {
            let heads = sa.shape()[1];
            for (b, &len) in lengths.iter().enumerate() {
                let at =
                    |h: usize, i: usize, j: usize| sa.values()[((b * heads + h) * n + i) * n + j];
                let per: Vec<Vec<Vec<f64>>> = (0..heads)
                    .map(|h| {
                        (0..len)
                            .map(|i| (0..len).map(|j| at(h, i, j)).collect())
                            .collect()
                    })
                    .collect();
                let head_avg: Vec<Vec<f64>> = (0..len)
                    .map(|i| {
                        (0..len)
                            .map(|j| per.iter().map(|m| m[i][j]).sum::<f64>() / heads as f64)
                            .collect()
                    })
                    .collect();
                let column_sums = (0..len)
                    .map(|j| head_avg.iter().map(|r| r[j]).sum())
                    .collect();
                attention.push(AttentionEntry {
                    tower: tower.to_string(),
                    layer: l + 1,
                    example: b,
                    head_avg,
                    column_sums,
                    heads: per_head.then_some(per),
                });
            }
        }
        for (l, ctx) in out.per_layer_context.iter().enumerate() {
            for (b, e) in cls_energy_lenient(ctx, batch.mask())?
                .into_iter()
                .enumerate()
            {
                e_cls.push(EnergyEntry {
                    tower: tower.to_string(),
                    layer: l + 1,
                    example: b,
                    e_cls: e,
                });
            }
        }
    }
    Ok(AttentionDump {
        tokens,
        attention,
        e_cls,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Mean E_CLS over every tower, layer and unpadded example of `sentences`.
/// Examples without non-CLS tokens are skipped.
pub fn mean_energy<S: AsRef<str>>(model: &Model, vocab: &Vocab, sentences: &[S]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in sentences.chunks(EMBED_CHUNK) {
        let refs: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
        let batch = Batch::encode(vocab, &refs, model.config().max_seq_len)?;
        for (_, out) in model.tower_outputs(&batch)? {
            for ctx in &out.per_layer_context {
                for e in cls_energy_lenient(ctx, batch.mask())?.into_iter().flatten() {
                    sum += e;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Metric("no example has non-CLS tokens".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EclsRow {
    pub checkpoint: String,
    pub e_cls: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EclsTrend {
    pub rows: Vec<EclsRow>,
    /// Rank correlation between the E_CLS and Spearman columns; `None`
    /// when either column is constant.
    pub correlation: Option<f64>,
}

impl EclsTrend {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("checkpoint,e_cls,spearman\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.checkpoint, r.e_cls, r.spearman));
        }
        s
    }
}

/// Mean dev E_CLS and dev Spearman per checkpoint, plus their rank
/// correlation. The sign of the correlation is reported, not asserted.
pub fn ecls_trend(
    models: &[(String, &Model)],
    vocab: &Vocab,
    dev: &[StsExample],
) -> Result<EclsTrend> {
    if models.len() < 2 {
        return Err(Error::contract(
            "ecls_trend",
            format!("needs at least 2 checkpoints, got {}", models.len()),
        ));
    }
    let sentences: Vec<&str> = dev.iter().map(|p| p.sentence_a.as_str()).collect();
    let rows = models
        .iter()
        .map(|(id, m)| {
            Ok(EclsRow {
                checkpoint: id.clone(),
                e_cls: mean_energy(m, vocab, &sentences)?,
                spearman: sts_spearman(m, vocab, dev)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let e: Vec<f64> = rows.iter().map(|r| r.e_cls).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.spearman).collect();
    Ok(EclsTrend {
        correlation: spearman(&e, &s).ok(),
        rows,
    })
}
