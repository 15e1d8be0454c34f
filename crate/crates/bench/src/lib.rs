//! Shared fixtures for the criterion benchmarks.

use jtcse::cross::TwinModel;
use jtcse::data::{synth_corpus, Batch, SynthConfig, Vocab};
use jtcse::model::EncoderConfig;
use jtcse::Tensor;

/// A default-sized twin model with one training batch drawn from the
/// synthetic corpus.
pub struct Fixture {
    pub model: TwinModel,
    pub batch: Batch,
}

impl Fixture {
    pub fn new(batch_size: usize) -> Self {
        let cfg = EncoderConfig::default();
        let corpus = synth_corpus(&SynthConfig::new(7, 16, 400)).expect("corpus");
        let vocab = Vocab::build(&corpus.train, cfg.vocab_size).expect("vocab");
        let sentences: Vec<&str> = corpus.train[..batch_size].iter().map(String::as_str).collect();
        Fixture {
            model: TwinModel::init(&cfg, 2, 1).expect("model"),
            batch: Batch::encode(&vocab, &sentences, cfg.max_seq_len).expect("batch"),
        }
    }
}

/// Deterministic `rows x cols` matrix with entries in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize, salt: u64) -> Tensor {
    let values = (0..rows * cols)
        .map(|i| {
            let x = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15 ^ salt);
            (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::new(vec![rows, cols], values).expect("shape")
}
