use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub eval_every: usize,
    pub seed: u64,
    pub loss_mask: LossMask,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            eval_every: 25,
            seed: 1,
            loss_mask: LossMask::FULL,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size = {} must be at least 2 for in-batch negatives",
                self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.loss_mask.is_empty() {
            return Err(Error::Config("loss mask selects no terms".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}
