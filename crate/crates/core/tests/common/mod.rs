#![allow(dead_code)]

use jtcse::cross::TwinModel;
use jtcse::data::{Batch, Vocab};
use jtcse::model::{EncoderConfig, EncoderWeights};
use jtcse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_config() -> EncoderConfig {
    EncoderConfig {
        n_layers: 2,
        d: 8,
        n_heads: 2,
        d_ffn: 16,
        vocab_size: 12,
        max_seq_len: 8,
        dropout_p: 0.1,
    }
}

pub fn toy_vocab() -> Vocab {
    Vocab::build(["red fox runs far", "blue owl sleeps", "old cat runs"], 12).unwrap()
}

pub fn toy_twin(seed: u64) -> TwinModel {
    TwinModel::init(&toy_config(), 2, seed).unwrap()
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Batch of random in-vocabulary sequences with varied lengths.
pub fn random_batch(b: usize, max_n: usize, vocab_size: usize, rng: &mut ChaCha8Rng) -> Batch {
    let seqs: Vec<Vec<u32>> = (0..b)
        .map(|_| {
            let len = rng.random_range(2..=max_n);
            let mut s = vec![jtcse::data::CLS];
            s.extend((0..len - 2).map(|_| rng.random_range(4..vocab_size as u32)));
            s.push(jtcse::data::SEP);
            s
        })
        .collect();
    Batch::from_sequences(&seqs).unwrap()
}

/// Copy of `w` with every parameter perturbed by uniform noise of `scale`.
pub fn perturbed(w: &EncoderWeights, scale: f64, seed: u64) -> EncoderWeights {
    let mut out = w.clone();
    let mut r = rng(seed);
    for t in out.params_mut() {
        for v in t.values_mut() {
            *v += scale * r.random_range(-1.0..1.0);
        }
    }
    out
}

/// Worst relative gap between tape gradients of the twin objective and a
/// five-point central difference over every parameter of both towers.
/// Components below `floor` in magnitude are compared on an absolute
/// scale of `floor`, since their difference quotients are roundoff.
pub fn objective_gradient_error(
    model: &TwinModel,
    batch: &Batch,
    mask: jtcse::losses::LossMask,
    plan: jtcse::train::StepPlan,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    use jtcse::losses::LossConfig;
    use jtcse::train::{loss_and_grads, loss_value, twin_params_mut};
    let loss = LossConfig::default();
    let (_, grads) = loss_and_grads(model, batch, &loss, mask, plan).unwrap();
    let mut m = model.clone();
    let original: Vec<Vec<f64>> = twin_params_mut(&mut m).iter().map(|t| t.values().to_vec()).collect();
    let mut eval = |ti: usize, k: usize, x: f64| {
        twin_params_mut(&mut m)[ti].values_mut()[k] = x;
        loss_value(&m, batch, &loss, mask, plan).unwrap().total
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (ti, g) in grads.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let x = original[ti][k];
            let d1 = eval(ti, k, x + h) - eval(ti, k, x - h);
            let d2 = eval(ti, k, x + 2.0 * h) - eval(ti, k, x - 2.0 * h);
            eval(ti, k, x);
            let numeric = (8.0 * d1 - d2) / (12.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            count += 1;
        }
    }
    (worst, count)
}

/// Small synthetic task shared by the training tests.
pub struct Task {
    pub vocab: Vocab,
    pub corpus: jtcse::data::SynthCorpus,
    pub config: EncoderConfig,
}

pub fn small_task() -> Task {
    let corpus = jtcse::data::synth_corpus(&jtcse::data::SynthConfig {
        seed: 3,
        n_templates: 8,
        n_sentences: 400,
        n_pairs: 60,
    })
    .unwrap();
    let vocab = Vocab::build(&corpus.train, 160).unwrap();
    let config = EncoderConfig {
        n_layers: 2,
        d: 16,
        n_heads: 2,
        d_ffn: 32,
        vocab_size: 160,
        max_seq_len: 16,
        dropout_p: 0.1,
    };
    Task {
        vocab,
        corpus,
        config,
    }
}
