use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "jtcse",
    version,
    about = "Twin-encoder contrastive sentence embeddings",
    args_override_self = true
)]
pub struct Cli {
    /// Flat `key = value` file; keys are long flag names. Flags on the
    /// command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a graded synthetic paraphrase corpus.
    Synth(SynthArgs),
    /// Train a twin model.
    Train(TrainArgs),
    /// Train one model per loss subset and seed.
    Ablate(AblateArgs),
    /// Distill a trained twin model into a single tower.
    Distill(DistillArgs),
    /// Score a checkpoint on an STS file.
    Eval(EvalArgs),
    /// Dump attention maps and CLS energy weights.
    Diagnose(DiagnoseArgs),
    /// Export the closed-form modulus surface as CSV.
    LossSurface(SurfaceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Ablate(_) => "ablate",
            Command::Distill(_) => "distill",
            Command::Eval(_) => "eval",
            Command::Diagnose(_) => "diagnose",
            Command::LossSurface(_) => "loss-surface",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of templates in use (4 to 24).
    #[arg(long, default_value_t = 16)]
    pub templates: usize,
    #[arg(long, default_value_t = 4000)]
    pub sentences: usize,
    /// Pairs in each of the dev and test sets.
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    /// Output directory for train.txt, dev.tsv and test.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ffn: usize,
    /// Vocabulary capacity, reserved tokens included.
    #[arg(long, default_value_t = 2048)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 25)]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LossArgs {
    /// Comma-separated subset of nce, icnce, ictm.
    #[arg(long, default_value = "nce,icnce,ictm")]
    pub loss_mask: String,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Lower clamp of the cross-tower cosine in the modulus coefficient.
    #[arg(long, default_value_t = 1e-4)]
    pub sim_eps: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training sentences, one per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Dev STS file (sentence_a, sentence_b, gold; tab-separated).
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CAEL interval: a cross-attention layer at every k-th layer.
    #[arg(long, default_value_t = 2)]
    pub cael_k: usize,
    /// Also save a checkpoint at every evaluation step divisible by this
    /// (0 disables).
    #[arg(long, default_value_t = 0)]
    pub save_every: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Loss subsets separated by `;`.
    #[arg(long, default_value = "nce;nce,icnce;nce,ictm;nce,icnce,ictm")]
    pub masks: String,
    /// Seeds: comma-separated values or an inclusive range such as `1-5`.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long, default_value_t = 2)]
    pub cael_k: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub sim_eps: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    /// Twin-model checkpoint.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Student depth; width and vocabulary follow the teacher.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub student_dropout: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sts: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub buckets: usize,
    #[arg(long, default_value_t = 2.0)]
    pub uniformity_t: f64,
    /// Sequence length for the analytic MAC count.
    #[arg(long, default_value_t = 128)]
    pub mac_seq_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Checkpoint; repeat for an E_CLS trend across checkpoints.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub sts: PathBuf,
    /// Number of dev sentences in the attention dump.
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub per_head: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SurfaceArgs {
    #[arg(long, default_value_t = 0.1)]
    pub k_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub k_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub k_step: f64,
    #[arg(long, default_value_t = 201)]
    pub t_steps: usize,
    /// CSV file to write; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}
