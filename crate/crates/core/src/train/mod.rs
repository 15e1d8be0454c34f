//! Twin training, distillation, ablation harnesses, cost accounting and
//! checkpoints.

mod ablate;
mod checkpoint;
mod config;
mod distill;
mod macs;
mod optim;
mod run;

pub use ablate::{ablate, seed_sweep, AblationRow, SweepReport};
pub use checkpoint::{CheckpointBundle, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use distill::{
    distill, distill_step, teacher_agreement, DistillConfig, DistillOutcome, DistillRow,
};
pub use macs::{macs_and_eta, tower_macs};
pub use optim::{Adam, AdamConfig};
pub use run::{
    loss_and_grads, loss_value, modulus_mismatch, smooth, trace_csv, train, train_step, train_with,
    twin_params_mut, StepPlan, TraceRow, TrainOutcome, TRACE_HEADER,
};
