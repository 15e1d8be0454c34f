use super::config::TrainConfig;
use super::run::{modulus_mismatch, train};
use crate::cross::TwinModel;
use crate::data::{StsExample, Vocab};
use crate::error::{Error, Result};
use crate::infer::{sts_spearman, Model};
use crate::losses::LossMask;
use crate::model::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mask: LossMask,
    /// Dev Spearman of the retained checkpoint.
    pub best_spearman: f64,
    /// Dev Spearman after the last step.
    pub final_spearman: f64,
    /// Modulus mismatch of the last-step model.
    pub modulus_mismatch: f64,
}

/// Trains one copy of `init` per loss subset under the same seed.
pub fn ablate(
    init: &TwinModel,
    vocab: &Vocab,
    corpus: &[String],
    dev: &[StsExample],
    base: &TrainConfig,
    masks: &[LossMask],
) -> Result<Vec<AblationRow>> {
    let probe: Vec<&str> = dev.iter().map(|p| p.sentence_a.as_str()).collect();
    masks
        .iter()
        .map(|&mask| {
            let cfg = TrainConfig {
                loss_mask: mask,
                ..*base
            };
            let out = train(init.clone(), vocab, corpus, dev, &cfg)?;
            Ok(AblationRow {
                mask,
                best_spearman: out.best.best_spearman,
                final_spearman: sts_spearman(&Model::Twin(out.final_model.clone()), vocab, dev)?,
                modulus_mismatch: modulus_mismatch(&out.final_model, vocab, &probe, base.seed)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// `(seed, best dev Spearman)` per run.
    pub runs: Vec<(u64, f64)>,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single run).
    pub variance: f64,
}

/// One training run per seed, each with its own initialization.
pub fn seed_sweep(
    enc: &EncoderConfig,
    k: usize,
    vocab: &Vocab,
    corpus: &[String],
    dev: &[StsExample],
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config("seed sweep needs at least one seed".into()));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..*base };
            let out = train(TwinModel::init(enc, k, seed)?, vocab, corpus, dev, &cfg)?;
            Ok((seed, out.best.best_spearman))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let variance = if runs.len() > 1 {
        runs.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(SweepReport {
        runs,
        mean,
        variance,
    })
}
