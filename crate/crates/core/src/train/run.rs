use std::fmt::Write as _;

use rand::Rng;

use super::checkpoint::CheckpointBundle;
use super::config::TrainConfig;
use super::optim::Adam;
use crate::cross::{pass_dropouts, twin_encode, twin_forward, TwinMode, TwinModel};
use crate::data::{make_batches, Batch, StsExample, Vocab};
use crate::error::{Error, Result};
use crate::infer::{sts_spearman, Model, EMBED_CHUNK};
use crate::losses::{jtcse_loss, LossConfig, LossMask, LossReport};
use crate::model::EncoderWeights;
use crate::rng::{derive, stream, stream_rng};
use crate::tensor::{l2, Graph};

/// Dropout seeds of the two passes and the ICNCE gate for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPlan {
    pub pass_seeds: [u64; 2],
    pub r: bool,
}

impl StepPlan {
    pub fn for_step(seed: u64, step: usize) -> Self {
        let s = step as u64;
        StepPlan {
            pass_seeds: [
                derive(seed, &[stream::DROPOUT_PASS_1, s]),
                derive(seed, &[stream::DROPOUT_PASS_2, s]),
            ],
            r: stream_rng(seed, &[stream::GATE, s]).random::<bool>(),
        }
    }
}

fn objective(
    model: &TwinModel,
    batch: &Batch,
    loss: &LossConfig,
    mask: LossMask,
    plan: StepPlan,
    with_grads: bool,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vi = model.encoder_i.bind(&mut g, with_grads);
    let vii = model.encoder_ii.bind(&mut g, with_grads);
    let p = model.config().dropout_p;
    let [mut a1, mut b1, mut ca, mut cb] = pass_dropouts(p, plan.pass_seeds[0], TwinMode::TRAIN);
    let [mut a2, mut b2, _, _] = pass_dropouts(p, plan.pass_seeds[1], TwinMode::TRAIN);
    let cross = mask.icnce.then_some([&mut ca, &mut cb]);
    let pass1 = twin_encode(
        &mut g,
        &model.placement,
        [&vi, &vii],
        batch,
        [&mut a1, &mut b1],
        cross,
    )?;
    let pass2 = twin_encode(
        &mut g,
        &model.placement,
        [&vi, &vii],
        batch,
        [&mut a2, &mut b2],
        None,
    )?;
    let terms = jtcse_loss(&mut g, &pass1, &pass2, loss, mask, plan.r)?;
    let mut report = terms.report(&g);
    if !with_grads {
        return Ok((report, Vec::new()));
    }
    g.backward(terms.total)?;
    report.has_grad = true;
    let mut grads = EncoderWeights::collect_grads(&g, &vi);
    grads.extend(EncoderWeights::collect_grads(&g, &vii));
    Ok((report, grads))
}

/// Objective value and gradients for every parameter of both towers, in
/// `encoder_i.params_mut()` then `encoder_ii.params_mut()` order.
pub fn loss_and_grads(
    model: &TwinModel,
    batch: &Batch,
    loss: &LossConfig,
    mask: LossMask,
    plan: StepPlan,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    objective(model, batch, loss, mask, plan, true)
}

/// Objective value without building gradients.
pub fn loss_value(
    model: &TwinModel,
    batch: &Batch,
    loss: &LossConfig,
    mask: LossMask,
    plan: StepPlan,
) -> Result<LossReport> {
    Ok(objective(model, batch, loss, mask, plan, false)?.0)
}

/// Mutable parameters of both towers in gradient order.
pub fn twin_params_mut(model: &mut TwinModel) -> Vec<&mut crate::tensor::Tensor> {
    let mut p = model.encoder_i.params_mut();
    p.extend(model.encoder_ii.params_mut());
    p
}

/// One optimizer step. Fails with a divergence error naming the first
/// non-finite term.
pub fn train_step(
    model: &mut TwinModel,
    opt: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossReport> {
    let plan = StepPlan::for_step(cfg.seed, step);
    let (report, grads) = loss_and_grads(model, batch, &cfg.loss, cfg.loss_mask, plan)?;
    if let Some((term, value)) = report.non_finite() {
        return Err(Error::Divergence { step, term, value });
    }
    opt.update(twin_params_mut(model), &grads)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Absent for the pre-training evaluation row.
    pub loss: Option<LossReport>,
    pub dev_spearman: Option<f64>,
}

pub const TRACE_HEADER: &str = "step,loss_total,l_nce_I,l_nce_II,l_icnce,l_ictm,dev_spearman";

/// Metric trace as CSV; absent values are empty cells.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for row in trace {
        let _ = write!(s, "{}", row.step);
        match row.loss {
            Some(l) => {
                let _ = write!(
                    s,
                    ",{},{},{},{},{}",
                    l.total, l.l_nce_i, l.l_nce_ii, l.l_icnce, l.l_ictm
                );
            }
            None => s.push_str(",,,,,"),
        }
        match row.dev_spearman {
            Some(r) => {
                let _ = writeln!(s, ",{r}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Highest dev Spearman over all evaluation points, step 0 included.
    pub best: CheckpointBundle,
    pub final_model: TwinModel,
    pub trace: Vec<TraceRow>,
    pub initial_spearman: f64,
}

/// Shuffled batches for every epoch, generated lazily.
pub(crate) struct BatchCycle<'a> {
    corpus: &'a [String],
    vocab: &'a Vocab,
    batch_size: usize,
    max_len: usize,
    seed: u64,
    epoch: u64,
    queue: std::vec::IntoIter<Batch>,
}

impl<'a> BatchCycle<'a> {
    pub(crate) fn new(
        corpus: &'a [String],
        vocab: &'a Vocab,
        batch_size: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if corpus.len() < batch_size {
            return Err(Error::Data(format!(
                "corpus has {} sentences, fewer than one batch of {batch_size}",
                corpus.len()
            )));
        }
        Ok(BatchCycle {
            corpus,
            vocab,
            batch_size,
            max_len,
            seed,
            epoch: 0,
            queue: Vec::new().into_iter(),
        })
    }

    pub(crate) fn next_batch(&mut self) -> Result<Batch> {
        loop {
            if let Some(b) = self.queue.next() {
                return Ok(b);
            }
            let seed = derive(self.seed, &[stream::SHUFFLE, self.epoch]);
            self.epoch += 1;
            self.queue =
                make_batches(self.corpus, self.vocab, self.batch_size, self.max_len, seed)?
                    .into_iter();
        }
    }
}

/// Trains both towers jointly. `on_eval` sees every evaluation point
/// (step, model, dev Spearman), step 0 included.
pub fn train_with(
    mut model: TwinModel,
    vocab: &Vocab,
    corpus: &[String],
    dev: &[StsExample],
    cfg: &TrainConfig,
    on_eval: &mut dyn FnMut(usize, &TwinModel, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::Data("dev set is empty".into()));
    }
    let mut batches = BatchCycle::new(
        corpus,
        vocab,
        cfg.batch_size,
        model.config().max_seq_len,
        cfg.seed,
    )?;
    let mut opt = Adam::new(cfg.optimizer);
    let evaluate = |m: &TwinModel| sts_spearman(&Model::Twin(m.clone()), vocab, dev);

    let initial = evaluate(&model)?;
    on_eval(0, &model, initial)?;
    let mut trace = vec![TraceRow {
        step: 0,
        loss: None,
        dev_spearman: Some(initial),
    }];
    let mut best = (initial, 0, model.clone());
    for step in 1..=cfg.steps {
        let batch = batches.next_batch()?;
        let report = train_step(&mut model, &mut opt, &batch, cfg, step)?;
        let dev_spearman = if step % cfg.eval_every == 0 || step == cfg.steps {
            let rho = evaluate(&model)?;
            on_eval(step, &model, rho)?;
            if rho > best.0 {
                best = (rho, step, model.clone());
            }
            Some(rho)
        } else {
            None
        };
        trace.push(TraceRow {
            step,
            loss: Some(report),
            dev_spearman,
        });
    }
    let (best_spearman, step, best_model) = best;
    Ok(TrainOutcome {
        best: CheckpointBundle {
            model: Model::Twin(best_model),
            vocab: vocab.clone(),
            best_spearman,
            step,
        },
        final_model: model,
        trace,
        initial_spearman: initial,
    })
}

pub fn train(
    model: TwinModel,
    vocab: &Vocab,
    corpus: &[String],
    dev: &[StsExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, vocab, corpus, dev, cfg, &mut |_, _, _| Ok(()))
}

/// `mean |‖h_I^P‖ − ‖h_II^{P+}‖| / mean norm` over `sentences`, with the
/// two dropout passes drawn from a fixed evaluation seed.
pub fn modulus_mismatch<S: AsRef<str>>(
    model: &TwinModel,
    vocab: &Vocab,
    sentences: &[S],
    seed: u64,
) -> Result<f64> {
    let mode = TwinMode {
        dropout: true,
        cross: false,
    };
    let (mut gap, mut norm_sum, mut count) = (0.0, 0.0, 0usize);
    for (c, chunk) in sentences.chunks(EMBED_CHUNK).enumerate() {
        let refs: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
        let batch = Batch::encode(vocab, &refs, model.config().max_seq_len)?;
        let c = c as u64;
        let (p1, _, _) = twin_forward(model, &batch, derive(seed, &[stream::EVAL, 1, c]), mode)?;
        let (_, p2, _) = twin_forward(model, &batch, derive(seed, &[stream::EVAL, 2, c]), mode)?;
        for i in 0..batch.batch_size() {
            let (a, b) = (l2(p1.pooler_out.row(i)), l2(p2.pooler_out.row(i)));
            gap += (a - b).abs();
            norm_sum += a + b;
            count += 1;
        }
    }
    if count == 0 || norm_sum == 0.0 {
        return Err(Error::Metric(
            "modulus mismatch needs nonzero pooler outputs".into(),
        ));
    }
    Ok((gap / count as f64) / (norm_sum / (2 * count) as f64))
}

/// Trailing-window moving average; entry `i` averages `x[i+1-w ..= i]`
/// (shorter at the start).
pub fn smooth(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..x.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            x[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
