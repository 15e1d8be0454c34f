use serde::{Deserialize, Serialize};

use super::checkpoint::CheckpointBundle;
use super::optim::{Adam, AdamConfig};
use super::run::BatchCycle;
use crate::cross::TwinModel;
use crate::data::{Batch, StsExample, Vocab};
use crate::error::{Error, Result};
use crate::infer::{embed_sentences, infer_embed, sts_spearman, Model};
use crate::model::{encode, Dropout, EncoderWeights};
use crate::rng::{derive, stream, stream_rng};
use crate::tensor::{cosine, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub eval_every: usize,
    pub seed: u64,
    /// Train the student with dropout active.
    pub student_dropout: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            steps: 200,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            eval_every: 25,
            seed: 1,
            student_dropout: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.eval_every == 0 {
            return Err(Error::Config(format!(
                "batch_size ({}) and eval_every ({}) must be positive",
                self.batch_size, self.eval_every
            )));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillRow {
    pub step: usize,
    pub mse: Option<f64>,
    pub dev_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub best: CheckpointBundle,
    pub final_student: EncoderWeights,
    pub trace: Vec<DistillRow>,
    /// Mean cosine between student and teacher embeddings of the dev
    /// sentences, at initialization and after the last step.
    pub heldout_cosine_initial: f64,
    pub heldout_cosine_final: f64,
}

fn check_geometry(teacher: &TwinModel, student: &EncoderWeights) -> Result<()> {
    let (t, s) = (teacher.config(), &student.config);
    if t.d != s.d {
        return Err(Error::Config(format!(
            "teacher width d = {} but student d = {}",
            t.d, s.d
        )));
    }
    Ok(())
}

fn max_len(teacher: &TwinModel, student: &EncoderWeights) -> usize {
    teacher.config().max_seq_len.min(student.config.max_seq_len)
}

/// One MSE step of the student towards the teacher's inference embedding.
/// Returns the loss before the update.
pub fn distill_step(
    teacher: &TwinModel,
    student: &mut EncoderWeights,
    opt: &mut Adam,
    batch: &Batch,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let target = infer_embed(teacher, batch)?;
    let mut g = Graph::new();
    let vars = student.bind(&mut g, true);
    let mut dropout = match dropout_seed {
        Some(seed) => Dropout::new(
            student.config.dropout_p,
            stream_rng(seed, &[stream::PRIMITIVE]),
        ),
        None => Dropout::off(),
    };
    let trace = encode(&mut g, &vars, batch, &mut dropout)?;
    let target = g.constant(target);
    let diff = g.sub(trace.cls, target)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq);
    let value = g.value(mse).item();
    if !value.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            term: "mse",
            value,
        });
    }
    g.backward(mse)?;
    let grads = EncoderWeights::collect_grads(&g, &vars);
    opt.update(student.params_mut(), &grads)?;
    Ok(value)
}

/// Mean cosine between student CLS poolings and teacher inference
/// embeddings.
pub fn teacher_agreement<S: AsRef<str>>(
    teacher: &TwinModel,
    student: &EncoderWeights,
    vocab: &Vocab,
    sentences: &[S],
) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Data("no sentences to compare".into()));
    }
    let t = embed_sentences(&Model::Twin(teacher.clone()), vocab, sentences)?;
    let s = embed_sentences(&Model::Single(student.clone()), vocab, sentences)?;
    let total = t
        .iter()
        .zip(&s)
        .map(|(a, b)| cosine(a, b))
        .sum::<Result<f64>>()?;
    Ok(total / t.len() as f64)
}

/// Distills the twin model into one tower. The teacher is only read.
pub fn distill(
    teacher: &TwinModel,
    mut student: EncoderWeights,
    vocab: &Vocab,
    corpus: &[String],
    dev: &[StsExample],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    check_geometry(teacher, &student)?;
    if dev.is_empty() {
        return Err(Error::Data("dev set is empty".into()));
    }
    let heldout: Vec<&str> = dev.iter().map(|p| p.sentence_a.as_str()).collect();
    let heldout_cosine_initial = teacher_agreement(teacher, &student, vocab, &heldout)?;
    let mut batches = BatchCycle::new(
        corpus,
        vocab,
        cfg.batch_size,
        max_len(teacher, &student),
        cfg.seed,
    )?;
    let mut opt = Adam::new(cfg.optimizer);
    let evaluate = |s: &EncoderWeights| sts_spearman(&Model::Single(s.clone()), vocab, dev);

    let initial = evaluate(&student)?;
    let mut trace = vec![DistillRow {
        step: 0,
        mse: None,
        dev_spearman: Some(initial),
    }];
    let mut best = (initial, 0, student.clone());
    for step in 1..=cfg.steps {
        let batch = batches.next_batch()?;
        let seed = cfg
            .student_dropout
            .then(|| derive(cfg.seed, &[stream::DROPOUT_PASS_1, step as u64]));
        let mse =
            distill_step(teacher, &mut student, &mut opt, &batch, seed).map_err(|e| match e {
                Error::Divergence { term, value, .. } => Error::Divergence { step, term, value },
                other => other,
            })?;
        let dev_spearman = if step % cfg.eval_every == 0 || step == cfg.steps {
            let rho = evaluate(&student)?;
            if rho > best.0 {
                best = (rho, step, student.clone());
            }
            Some(rho)
        } else {
            None
        };
        trace.push(DistillRow {
            step,
            mse: Some(mse),
            dev_spearman,
        });
    }
    let heldout_cosine_final = teacher_agreement(teacher, &student, vocab, &heldout)?;
    let (best_spearman, step, best_student) = best;
    Ok(DistillOutcome {
        best: CheckpointBundle {
            model: Model::Single(best_student),
            vocab: vocab.clone(),
            best_spearman,
            step,
        },
        final_student: student,
        trace,
        heldout_cosine_initial,
        heldout_cosine_final,
    })
}
