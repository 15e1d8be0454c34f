//! Inference-mode sentence embeddings.

use crate::cross::{twin_forward, TwinMode, TwinModel};
use crate::data::{Batch, StsExample, Vocab};
use crate::error::{Error, Result};
use crate::metrics::spearman;
use crate::model::{forward, EmbeddingOutputs, EncoderConfig, EncoderWeights};
use crate::tensor::{cosine, Tensor};

/// Sentences per inference batch.
pub const EMBED_CHUNK: usize = 64;

/// Dropout off, cross branch off; the sum of both towers' CLS poolings.
pub fn infer_embed(model: &TwinModel, batch: &Batch) -> Result<Tensor> {
    let (a, b, _) = twin_forward(model, batch, 0, TwinMode::INFERENCE)?;
    let sum = a
        .cls_pool
        .values()
        .iter()
        .zip(b.cls_pool.values())
        .map(|(x, y)| x + y)
        .collect();
    Tensor::new(a.cls_pool.shape().to_vec(), sum)
}

/// Anything that can be evaluated: the twin model or a distilled tower.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Twin(TwinModel),
    Single(EncoderWeights),
}

impl Model {
    pub fn config(&self) -> &EncoderConfig {
        match self {
            Model::Twin(t) => t.config(),
            Model::Single(w) => &w.config,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Twin(_) => "twin",
            Model::Single(_) => "single",
        }
    }

    pub fn n_towers(&self) -> usize {
        match self {
            Model::Twin(_) => 2,
            Model::Single(_) => 1,
        }
    }

    /// Inference embedding `[B x d]`.
    pub fn embed(&self, batch: &Batch) -> Result<Tensor> {
        match self {
            Model::Twin(t) => infer_embed(t, batch),
            Model::Single(w) => Ok(forward(w, batch, 0, false)?.cls_pool),
        }
    }

    /// Inference-mode outputs of every tower, labelled.
    pub fn tower_outputs(&self, batch: &Batch) -> Result<Vec<(&'static str, EmbeddingOutputs)>> {
        match self {
            Model::Twin(t) => {
                let (a, b, _) = twin_forward(t, batch, 0, TwinMode::INFERENCE)?;
                Ok(vec![("I", a), ("II", b)])
            }
            Model::Single(w) => Ok(vec![("student", forward(w, batch, 0, false)?)]),
        }
    }
}

/// Embeds sentences in fixed-size chunks; row `i` belongs to sentence `i`.
pub fn embed_sentences<S: AsRef<str>>(
    model: &Model,
    vocab: &Vocab,
    sentences: &[S],
) -> Result<Vec<Vec<f64>>> {
    let max_len = model.config().max_seq_len;
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(EMBED_CHUNK) {
        let refs: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
        let emb = model.embed(&Batch::encode(vocab, &refs, max_len)?)?;
        out.extend((0..emb.rows()).map(|i| emb.row(i).to_vec()));
    }
    Ok(out)
}

/// Predicted cosine similarity for every pair.
pub fn pair_cosines(model: &Model, vocab: &Vocab, pairs: &[StsExample]) -> Result<Vec<f64>> {
    let a: Vec<&str> = pairs.iter().map(|p| p.sentence_a.as_str()).collect();
    let b: Vec<&str> = pairs.iter().map(|p| p.sentence_b.as_str()).collect();
    let (ea, eb) = (
        embed_sentences(model, vocab, &a)?,
        embed_sentences(model, vocab, &b)?,
    );
    ea.iter()
        .zip(&eb)
        .map(|(x, y)| cosine(x, y).map_err(|e| Error::Metric(format!("pair cosine: {e}"))))
        .collect()
}

/// Spearman correlation between predicted cosines and gold scores.
pub fn sts_spearman(model: &Model, vocab: &Vocab, pairs: &[StsExample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("STS set is empty".into()));
    }
    let pred = pair_cosines(model, vocab, pairs)?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    spearman(&pred, &gold)
}
