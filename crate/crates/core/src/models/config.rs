use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel sizes of successive causal blocks; a config with `n` blocks uses
/// the first `n` entries.
pub const CAUSAL_KERNELS: [usize; 6] = [2, 3, 4, 5, 6, 7];
pub const CAUSAL_BLOCK_CHOICES: [usize; 3] = [2, 4, 6];
pub const ORIGINAL_KERNEL_CHOICES: [usize; 2] = [3, 5];

pub const ENHANCED_FILTERS: [usize; 4] = [32, 64, 128, 256];
pub const ENHANCED_KERNELS: [usize; 4] = [4, 1, 1, 1];
pub const ENHANCED_STRIDES: [usize; 4] = [2, 1, 1, 1];
pub const ORIGINAL_FILTERS: [usize; 3] = [32, 64, 128];

pub const CONTEXT_DIM: usize = 256;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Four strided conv layers, one latent per two input samples.
    Enhanced,
    /// Three stride-1 conv layers, one latent per input sample.
    Original,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorVariant {
    CausalConv,
    Gru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVariant {
    /// Every context vector predicts the next `horizon` latents against
    /// negatives drawn from the other windows.
    PerTimestep,
    /// One random anchor per batch; negatives are the other windows' latents
    /// at the same offset.
    SingleAnchor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderVariant,
    pub aggregator: AggregatorVariant,
    pub task: TaskVariant,
    pub causal_blocks: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub original_kernel_size: usize,
    pub horizon: usize,
    pub num_negatives: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::enhanced()
    }
}

impl ModelConfig {
    pub fn enhanced() -> Self {
        ModelConfig {
            encoder: EncoderVariant::Enhanced,
            aggregator: AggregatorVariant::CausalConv,
            task: TaskVariant::PerTimestep,
            causal_blocks: 2,
            gru_layers: 2,
            gru_units: 256,
            original_kernel_size: 3,
            horizon: 12,
            num_negatives: 10,
            dropout: 0.2,
        }
    }

    /// The GRU-based baseline with the stride-1 encoder.
    pub fn original() -> Self {
        ModelConfig {
            encoder: EncoderVariant::Original,
            aggregator: AggregatorVariant::Gru,
            task: TaskVariant::SingleAnchor,
            horizon: 16,
            ..ModelConfig::enhanced()
        }
    }

    pub fn z_dim(&self) -> usize {
        match self.encoder {
            EncoderVariant::Enhanced => ENHANCED_FILTERS[3],
            EncoderVariant::Original => ORIGINAL_FILTERS[2],
        }
    }

    pub fn context_dim(&self) -> usize {
        match self.aggregator {
            AggregatorVariant::CausalConv => CONTEXT_DIM,
            AggregatorVariant::Gru => self.gru_units,
        }
    }

    pub fn causal_kernels(&self) -> &'static [usize] {
        &CAUSAL_KERNELS[..self.causal_blocks.min(CAUSAL_KERNELS.len())]
    }

    /// Number of latent steps produced from a window of `window_len` samples.
    pub fn latent_len(&self, window_len: usize) -> usize {
        match self.encoder {
            EncoderVariant::Enhanced => window_len / 2,
            EncoderVariant::Original => window_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !CAUSAL_BLOCK_CHOICES.contains(&self.causal_blocks) {
            return Err(Error::Config(format!(
                "causal_blocks must be one of {CAUSAL_BLOCK_CHOICES:?}, got {}",
                self.causal_blocks
            )));
        }
        if !ORIGINAL_KERNEL_CHOICES.contains(&self.original_kernel_size) {
            return Err(Error::Config(format!(
                "original_kernel_size must be one of {ORIGINAL_KERNEL_CHOICES:?}, got {}",
                self.original_kernel_size
            )));
        }
        if self.gru_layers == 0 || self.gru_units == 0 {
            return Err(Error::Config("GRU needs at least one layer and one unit".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.task == TaskVariant::PerTimestep && self.num_negatives == 0 {
            return Err(Error::Config("per-timestep task needs at least one negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidProbability(self.dropout));
        }
        Ok(())
    }
}
