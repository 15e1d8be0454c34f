//! Text ingestion: vocabulary, tokenization, batching, STS files and the
//! synthetic graded-paraphrase corpus.

mod batch;
mod io;
mod synth;
mod vocab;

pub use batch::{make_batches, Batch, MASK_BIAS};
pub use io::{read_corpus, read_sts, write_corpus, write_sts};
pub use synth::{grade, synth_corpus, SentenceSpec, SynthConfig, SynthCorpus, Synthesizer};
pub use vocab::{Vocab, CLS, PAD, RESERVED, SEP, UNK};

/// A sentence pair with a gold similarity in `[0, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StsExample {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

impl StsExample {
    pub fn new(
        sentence_a: impl Into<String>,
        sentence_b: impl Into<String>,
        gold: f64,
    ) -> crate::Result<Self> {
        if !(0.0..=5.0).contains(&gold) {
            return Err(crate::Error::Data(format!(
                "gold score {gold} outside [0, 5]"
            )));
        }
        Ok(StsExample {
            sentence_a: sentence_a.into(),
            sentence_b: sentence_b.into(),
            gold,
        })
    }
}
