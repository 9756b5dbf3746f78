use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LR_DECAY_FACTOR: f64 = 0.8;
pub const LR_DECAY_EVERY: usize = 10;
/// Minimum decrease of the validation loss that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Classify,
}

/// Optimisation settings for one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping. Only used for pretraining.
    pub patience: usize,
    pub seed: u64,
    /// Share of the training windows used for pretraining.
    pub pretrain_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 50,
            patience: 5,
            seed: 0,
            pretrain_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn classifier() -> Self {
        TrainConfig {
            lr: 5e-4,
            patience: 0,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("lr and weight_decay must be finite and non-negative".into()));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "pretrain_fraction must lie in (0, 1], got {}",
                self.pretrain_fraction
            )));
        }
        Ok(())
    }
}

/// Step decay for classification, constant for pretraining.
pub fn lr_at_epoch(base_lr: f64, epoch: usize, phase: Phase) -> f64 {
    match phase {
        Phase::Pretrain => base_lr,
        Phase::Classify => base_lr * LR_DECAY_FACTOR.powi((epoch / LR_DECAY_EVERY) as i32),
    }
}
