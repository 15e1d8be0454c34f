use rand::seq::SliceRandom;

use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Additive attention bias for padded key positions.
pub const MASK_BIAS: f64 = -1e9;

/// Padded token ids `[batch x seq]` with a `{0,1}` attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    ids: Vec<u32>,
    mask: Vec<u8>,
    batch_size: usize,
    seq_len: usize,
}

impl Batch {
    /// Pads every sequence to the longest one.
    pub fn from_sequences(seqs: &[Vec<u32>]) -> Result<Self> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(Error::Data(
                "a batch needs at least one non-empty sequence".into(),
            ));
        }
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, seq_len - s.len()));
            mask.extend(std::iter::repeat_n(1u8, s.len()));
            mask.extend(std::iter::repeat_n(0u8, seq_len - s.len()));
        }
        Ok(Batch {
            ids,
            mask,
            batch_size: seqs.len(),
            seq_len,
        })
    }

    pub fn encode(vocab: &Vocab, sentences: &[&str], max_len: usize) -> Result<Self> {
        let seqs: Vec<Vec<u32>> = sentences
            .iter()
            .map(|s| vocab.tokenize(s, max_len))
            .collect();
        Self::from_sequences(&seqs)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn row_ids(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn row_mask(&self, b: usize) -> &[u8] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// Unpadded length of every row.
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|b| self.row_mask(b).iter().map(|&m| m as usize).sum())
            .collect()
    }

    /// `0` on real tokens, [`MASK_BIAS`] on padding; one entry per key.
    pub fn key_bias(&self) -> Vec<f64> {
        self.mask
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { MASK_BIAS })
            .collect()
    }
}

/// Tokenizes, shuffles with a seeded stream and cuts fixed-size batches.
/// The trailing short batch is dropped so every batch has the same number
/// of in-batch negatives.
pub fn make_batches<S: AsRef<str>>(
    sentences: &[S],
    vocab: &Vocab,
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size {batch_size} leaves no in-batch negatives (need at least 2)"
        )));
    }
    if max_len < 3 {
        return Err(Error::Config(format!(
            "max_len {max_len} must be at least 3"
        )));
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut stream_rng(seed, &[stream::SHUFFLE]));
    order
        .chunks_exact(batch_size)
        .map(|chunk| {
            let seqs: Vec<Vec<u32>> = chunk
                .iter()
                .map(|&i| vocab.tokenize(sentences[i].as_ref(), max_len))
                .collect();
            Batch::from_sequences(&seqs)
        })
        .collect()
}
