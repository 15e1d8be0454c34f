//! Evaluation and analysis tools.

mod density;
mod diagnose;
mod rank;

pub use density::{Bucket, CosineDensity, GOLD_MAX};
pub use diagnose::{
    attention_dump, ecls_trend, mean_energy, write_json, AttentionDump, AttentionEntry, EclsRow,
    EclsTrend, EnergyEntry,
};
pub use rank::{average_ranks, pearson, spearman};

use serde::Serialize;

use crate::data::{StsExample, Vocab};
use crate::error::{Error, Result};
use crate::infer::{embed_sentences, pair_cosines, Model};
use crate::losses;
use crate::tensor::Tensor;

/// Gold score at or above which a pair counts as positive for alignment.
pub const POSITIVE_GOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub spearman: f64,
    pub alignment: Option<f64>,
    pub uniformity: Option<f64>,
    pub monotonicity: Option<f64>,
    pub bucket_medians: Vec<Option<f64>>,
    pub n_pairs: usize,
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

/// Predicted cosines bucketed by gold score.
pub fn cosine_density(
    model: &Model,
    vocab: &Vocab,
    sts: &[StsExample],
    n_buckets: usize,
) -> Result<CosineDensity> {
    let pred = pair_cosines(model, vocab, sts)?;
    let gold: Vec<f64> = sts.iter().map(|p| p.gold).collect();
    CosineDensity::from_scores(&pred, &gold, n_buckets)
}

/// Spearman, alignment over high-gold pairs, uniformity over all distinct
/// sentences, and the cosine-density summary.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    sts: &[StsExample],
    uniformity_t: f64,
) -> Result<EvalReport> {
    if sts.is_empty() {
        return Err(Error::Data("STS set is empty".into()));
    }
    let pred = pair_cosines(model, vocab, sts)?;
    let gold: Vec<f64> = sts.iter().map(|p| p.gold).collect();
    let rho = spearman(&pred, &gold)?;
    let density = CosineDensity::from_scores(&pred, &gold, 5)?;

    let positives: Vec<&StsExample> = sts.iter().filter(|p| p.gold >= POSITIVE_GOLD).collect();
    let alignment = if positives.is_empty() {
        None
    } else {
        let a: Vec<&str> = positives.iter().map(|p| p.sentence_a.as_str()).collect();
        let b: Vec<&str> = positives.iter().map(|p| p.sentence_b.as_str()).collect();
        let ea = rows_tensor(&embed_sentences(model, vocab, &a)?)?;
        let eb = rows_tensor(&embed_sentences(model, vocab, &b)?)?;
        Some(losses::alignment(&ea, &eb)?)
    };
    let mut sentences: Vec<&str> = sts
        .iter()
        .flat_map(|p| [p.sentence_a.as_str(), p.sentence_b.as_str()])
        .collect();
    sentences.sort_unstable();
    sentences.dedup();
    let uniformity = if sentences.len() < 2 {
        None
    } else {
        let e = rows_tensor(&embed_sentences(model, vocab, &sentences)?)?;
        Some(losses::uniformity(&e, uniformity_t)?)
    };
    Ok(EvalReport {
        spearman: rho,
        alignment,
        uniformity,
        monotonicity: density.monotonicity(),
        bucket_medians: density.medians(),
        n_pairs: sts.len(),
    })
}
