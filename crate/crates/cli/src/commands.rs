use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use jtcse::cross::TwinModel;
use jtcse::data::{read_corpus, read_sts, synth_corpus, write_corpus, write_sts, Batch, SynthConfig, Vocab};
use jtcse::infer::Model;
use jtcse::losses::{tmc_surface, LossConfig, LossMask};
use jtcse::metrics::{attention_dump, cosine_density, ecls_trend, evaluate, write_json};
use jtcse::model::{EncoderConfig, EncoderWeights};
use jtcse::train::{
    ablate, distill, macs_and_eta, modulus_mismatch, trace_csv, train_with, AdamConfig,
    CheckpointBundle, DistillConfig, TrainConfig,
};
use jtcse::{Error, Result};
use serde::Serialize;

use crate::args::{
    AblateArgs, DiagnoseArgs, DistillArgs, EvalArgs, ModelArgs, OptimArgs, SurfaceArgs,
    SynthArgs, TrainArgs,
};
use crate::manifest::Recorder;

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(rec: &mut Recorder, path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    rec.output(path);
    Ok(())
}

fn encoder_config(m: &ModelArgs) -> Result<EncoderConfig> {
    let cfg = EncoderConfig {
        n_layers: m.layers,
        d: m.d,
        n_heads: m.heads,
        d_ffn: m.ffn,
        vocab_size: m.vocab_size,
        max_seq_len: m.max_seq_len,
        dropout_p: m.dropout,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn adam(o: &OptimArgs) -> AdamConfig {
    AdamConfig {
        learning_rate: o.lr,
        weight_decay: o.weight_decay,
        ..AdamConfig::default()
    }
}

fn train_config(o: &OptimArgs, seed: u64, mask: LossMask, tau: f64, sim_eps: f64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        steps: o.steps,
        batch_size: o.batch_size,
        optimizer: adam(o),
        eval_every: o.eval_every,
        seed,
        loss_mask: mask,
        loss: LossConfig {
            tau,
            sim_clamp_eps: sim_eps,
            ..LossConfig::default()
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the corpus and dev set, hashing both into the manifest.
fn inputs(rec: &mut Recorder, corpus: &Path, dev: &Path) -> Result<(Vec<String>, Vec<jtcse::data::StsExample>)> {
    let lines = read_corpus(corpus)?;
    let pairs = read_sts(dev)?;
    rec.input(corpus)?;
    rec.input(dev)?;
    Ok((lines, pairs))
}

fn load_checkpoint(rec: &mut Recorder, path: &Path) -> Result<CheckpointBundle> {
    let b = CheckpointBundle::load(path)?;
    rec.input(path)?;
    Ok(b)
}

fn save(rec: &mut Recorder, bundle: &CheckpointBundle, path: PathBuf) -> Result<()> {
    bundle.save(&path)?;
    rec.output(path);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let corpus = synth_corpus(&SynthConfig {
        seed: a.seed,
        n_templates: a.templates,
        n_sentences: a.sentences,
        n_pairs: a.pairs,
    })?;
    out_dir(&a.out)?;
    let files = [
        a.out.join("train.txt"),
        a.out.join("dev.tsv"),
        a.out.join("test.tsv"),
    ];
    write_corpus(&files[0], &corpus.train)?;
    write_sts(&files[1], &corpus.dev)?;
    write_sts(&files[2], &corpus.test)?;
    for f in files {
        rec.output(f);
    }
    eprintln!(
        "synth: {} sentences, {} dev and {} test pairs -> {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        a.out.display()
    );
    rec.finish("synth", a, Some(a.seed), &a.out.join("manifest.json"))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let (corpus, dev) = inputs(&mut rec, &a.corpus, &a.dev)?;
    let enc = encoder_config(&a.model)?;
    let mask: LossMask = a.loss.loss_mask.parse()?;
    let cfg = train_config(&a.optim, a.seed, mask, a.loss.tau, a.loss.sim_eps)?;
    if a.save_every > 0 && !a.save_every.is_multiple_of(cfg.eval_every) {
        return Err(Error::Config(format!(
            "save-every ({}) must be a multiple of eval-every ({})",
            a.save_every, cfg.eval_every
        )));
    }
    let vocab = Vocab::build(&corpus, enc.vocab_size)?;
    out_dir(&a.out)?;
    let init = TwinModel::init(&enc, a.cael_k, a.seed)?;
    let mut snapshots = Vec::new();
    let outcome = train_with(init, &vocab, &corpus, &dev, &cfg, &mut |step, model, rho| {
        eprintln!("train: step {step:>5}  dev spearman {rho:.4}");
        if a.save_every > 0 && step % a.save_every == 0 {
            let path = a.out.join(format!("step_{step:06}.ckpt"));
            CheckpointBundle {
                model: Model::Twin(model.clone()),
                vocab: vocab.clone(),
                best_spearman: rho,
                step,
            }
            .save(&path)?;
            snapshots.push(path);
        }
        Ok(())
    })?;
    for p in snapshots {
        rec.output(p);
    }
    save(&mut rec, &outcome.best, a.out.join("best.ckpt"))?;
    let last_rho = outcome
        .trace
        .iter()
        .rev()
        .find_map(|r| r.dev_spearman)
        .unwrap_or(outcome.initial_spearman);
    let final_bundle = CheckpointBundle {
        model: Model::Twin(outcome.final_model),
        vocab,
        best_spearman: last_rho,
        step: cfg.steps,
    };
    save(&mut rec, &final_bundle, a.out.join("final.ckpt"))?;
    write_text(&mut rec, a.out.join("trace.csv"), &trace_csv(&outcome.trace))?;
    eprintln!(
        "train: best dev spearman {:.4} at step {} (initial {:.4})",
        outcome.best.best_spearman, outcome.best.step, outcome.initial_spearman
    );
    rec.finish("train", a, Some(a.seed), &a.out.join("manifest.json"))
}

/// `1,3,5`, `1-5`, or a mix of both.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi): (u64, u64) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
                if lo > hi {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Serialize)]
struct MaskSummary {
    mask: String,
    runs: usize,
    mean_best_spearman: f64,
    variance_best_spearman: f64,
    mean_final_spearman: f64,
    mean_modulus_mismatch: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

pub fn ablate_cmd(a: &AblateArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let (corpus, dev) = inputs(&mut rec, &a.corpus, &a.dev)?;
    let enc = encoder_config(&a.model)?;
    let masks = a
        .masks
        .split(';')
        .map(|m| m.trim().parse())
        .collect::<Result<Vec<LossMask>>>()?;
    let seeds = parse_seeds(&a.seeds)?;
    let vocab = Vocab::build(&corpus, enc.vocab_size)?;
    out_dir(&a.out)?;
    let mut csv = String::from("seed,mask,best_spearman,final_spearman,modulus_mismatch\n");
    let mut rows = Vec::new();
    for &seed in &seeds {
        let cfg = train_config(&a.optim, seed, masks[0], a.tau, a.sim_eps)?;
        let init = TwinModel::init(&enc, a.cael_k, seed)?;
        for row in ablate(&init, &vocab, &corpus, &dev, &cfg, &masks)? {
            eprintln!(
                "ablate: seed {seed} mask {:<16} best {:.4} final {:.4} mismatch {:.4}",
                row.mask.to_string(),
                row.best_spearman,
                row.final_spearman,
                row.modulus_mismatch
            );
            let _ = writeln!(
                csv,
                "{seed},\"{}\",{},{},{}",
                row.mask, row.best_spearman, row.final_spearman, row.modulus_mismatch
            );
            rows.push(row);
        }
    }
    write_text(&mut rec, a.out.join("ablation.csv"), &csv)?;
    let summary: Vec<MaskSummary> = masks
        .iter()
        .map(|m| {
            let mine: Vec<_> = rows.iter().filter(|r| r.mask == *m).collect();
            let pick = |f: fn(&jtcse::train::AblationRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_best, var_best) = mean_var(&pick(|r| r.best_spearman));
            MaskSummary {
                mask: m.to_string(),
                runs: mine.len(),
                mean_best_spearman: mean_best,
                variance_best_spearman: var_best,
                mean_final_spearman: mean_var(&pick(|r| r.final_spearman)).0,
                mean_modulus_mismatch: mean_var(&pick(|r| r.modulus_mismatch)).0,
            }
        })
        .collect();
    let path = a.out.join("summary.json");
    write_json(&path, &summary)?;
    rec.output(path);
    rec.finish("ablate", a, seeds.first().copied(), &a.out.join("manifest.json"))
}

pub fn distill_cmd(a: &DistillArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let teacher = load_checkpoint(&mut rec, &a.teacher)?;
    let Model::Twin(twin) = teacher.model else {
        return Err(Error::Config(format!(
            "{} holds a single tower; distillation needs a twin checkpoint",
            a.teacher.display()
        )));
    };
    let (corpus, dev) = inputs(&mut rec, &a.corpus, &a.dev)?;
    let student_cfg = EncoderConfig {
        n_layers: a.layers.unwrap_or(twin.config().n_layers),
        ..*twin.config()
    };
    student_cfg.validate()?;
    let cfg = DistillConfig {
        steps: a.optim.steps,
        batch_size: a.optim.batch_size,
        optimizer: adam(&a.optim),
        eval_every: a.optim.eval_every,
        seed: a.seed,
        student_dropout: a.student_dropout,
    };
    let student = EncoderWeights::init(&student_cfg, a.seed)?;
    let out = distill(&twin, student, &teacher.vocab, &corpus, &dev, &cfg)?;
    out_dir(&a.out)?;
    save(&mut rec, &out.best, a.out.join("student.ckpt"))?;
    let final_bundle = CheckpointBundle {
        model: Model::Single(out.final_student),
        vocab: teacher.vocab.clone(),
        best_spearman: out.trace.iter().rev().find_map(|r| r.dev_spearman).unwrap_or(f64::NAN),
        step: cfg.steps,
    };
    save(&mut rec, &final_bundle, a.out.join("final.ckpt"))?;
    let mut csv = String::from("step,mse,dev_spearman\n");
    for r in &out.trace {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{}", r.step, opt(r.mse), opt(r.dev_spearman));
    }
    write_text(&mut rec, a.out.join("trace.csv"), &csv)?;
    eprintln!(
        "distill: held-out cosine to teacher {:.4} -> {:.4}; best dev spearman {:.4}",
        out.heldout_cosine_initial, out.heldout_cosine_final, out.best.best_spearman
    );
    rec.finish("distill", a, Some(a.seed), &a.out.join("manifest.json"))
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: jtcse::metrics::EvalReport,
    kind: &'static str,
    gmac: f64,
    eta: f64,
    modulus_mismatch: Option<f64>,
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let bundle = load_checkpoint(&mut rec, &a.model)?;
    let sts = read_sts(&a.sts)?;
    rec.input(&a.sts)?;
    let report = evaluate(&bundle.model, &bundle.vocab, &sts, a.uniformity_t)?;
    let density = cosine_density(&bundle.model, &bundle.vocab, &sts, a.buckets)?;
    let score = (report.spearman * 100.0).clamp(0.0, 100.0);
    let (gmac, eta) = macs_and_eta(bundle.model.config(), bundle.model.n_towers(), a.mac_seq_len, score)?;
    let modulus_mismatch = match &bundle.model {
        Model::Twin(t) => {
            let probe: Vec<&str> = sts.iter().map(|p| p.sentence_a.as_str()).collect();
            Some(modulus_mismatch(t, &bundle.vocab, &probe, 0)?)
        }
        Model::Single(_) => None,
    };
    eprintln!("eval: spearman {:.4} over {} pairs", report.spearman, report.n_pairs);
    out_dir(&a.out)?;
    let path = a.out.join("report.json");
    write_json(
        &path,
        &EvalOutput {
            report,
            kind: bundle.model.kind(),
            gmac,
            eta,
            modulus_mismatch,
        },
    )?;
    rec.output(path);
    write_text(&mut rec, a.out.join("density.csv"), &density.to_csv())?;
    rec.finish("eval", a, None, &a.out.join("manifest.json"))
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    let mut rec = Recorder::start();
    let bundles = a
        .model
        .iter()
        .map(|p| load_checkpoint(&mut rec, p))
        .collect::<Result<Vec<_>>>()?;
    let sts = read_sts(&a.sts)?;
    rec.input(&a.sts)?;
    out_dir(&a.out)?;
    let sentences: Vec<&str> = sts.iter().take(a.limit.max(1)).map(|p| p.sentence_a.as_str()).collect();
    for (i, b) in bundles.iter().enumerate() {
        let batch = Batch::encode(&b.vocab, &sentences, b.model.config().max_seq_len)?;
        let dump = attention_dump(&b.model, &b.vocab, &batch, a.per_head)?;
        let path = a.out.join(format!("attention_{i}.json"));
        write_json(&path, &dump)?;
        rec.output(path);
    }
    if bundles.len() >= 2 {
        if bundles.iter().any(|b| b.vocab != bundles[0].vocab) {
            return Err(Error::Config("E_CLS trend needs checkpoints sharing one vocabulary".into()));
        }
        let models: Vec<(String, &Model)> = a
            .model
            .iter()
            .zip(&bundles)
            .map(|(p, b)| (p.display().to_string(), &b.model))
            .collect();
        let trend = ecls_trend(&models, &bundles[0].vocab, &sts)?;
        match trend.correlation {
            Some(c) => eprintln!("diagnose: rank correlation of E_CLS and dev spearman {c:.4}"),
            None => eprintln!("diagnose: correlation undefined (a constant column)"),
        }
        write_text(&mut rec, a.out.join("ecls_trend.csv"), &trend.to_csv())?;
        let path = a.out.join("ecls_trend.json");
        write_json(&path, &trend)?;
        rec.output(path);
    }
    rec.finish("diagnose", a, None, &a.out.join("manifest.json"))
}

/// Manifest path for a command whose `--out` names a file.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn loss_surface(a: &SurfaceArgs) -> Result<()> {
    let mut rec = Recorder::start();
    if a.k_step.is_nan() || a.k_step <= 0.0 {
        return Err(Error::Config(format!("k-step must be positive, got {}", a.k_step)));
    }
    let k_steps = ((a.k_max - a.k_min) / a.k_step).round() as usize + 1;
    let grid = tmc_surface(a.k_min, a.k_max, k_steps, a.t_steps)?;
    let mut csv = String::with_capacity(grid.len() * 32);
    csv.push_str("k,t,value\n");
    for p in &grid {
        let _ = writeln!(csv, "{},{},{}", p.k, p.t, p.value);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    write_text(&mut rec, a.out.clone(), &csv)?;
    eprintln!("loss-surface: {k_steps} x {} grid -> {}", a.t_steps, a.out.display());
    rec.finish("loss-surface", a, None, &sibling_manifest(&a.out))
}
