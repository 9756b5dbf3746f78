use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::engine::Rng;
use crate::error::{Error, Result};
use crate::models::{AggregatorVariant, EncoderVariant, ModelConfig, TaskVariant, CAUSAL_BLOCK_CHOICES, ORIGINAL_KERNEL_CHOICES};

pub const PRETRAIN_LR: [f64; 3] = [1e-3, 1e-4, 5e-4];
pub const WEIGHT_DECAY: [f64; 3] = [0.0, 1e-4, 1e-5];
pub const CLASSIFIER_LR: [f64; 3] = [1e-4, 5e-4, 1e-5];
pub const HORIZON_PER_TIMESTEP: [usize; 2] = [10, 12];
pub const HORIZON_SINGLE_ANCHOR: [usize; 2] = [16, 32];
pub const NEGATIVES: [usize; 2] = [10, 15];

/// Named discrete grids; keys are dotted config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub grids: Vec<(String, Vec<f64>)>,
}

/// One point of a [`SearchSpace`].
pub type Combination = BTreeMap<String, f64>;

fn grid<T: Copy + Into<f64>>(key: &str, values: &[T]) -> (String, Vec<f64>) {
    (key.to_string(), values.iter().map(|&v| v.into()).collect())
}

fn usize_grid(key: &str, values: &[usize]) -> (String, Vec<f64>) {
    (key.to_string(), values.iter().map(|&v| v as f64).collect())
}

/// Allowed horizons for a model variant.
pub fn horizon_grid(task: TaskVariant) -> &'static [usize] {
    match task {
        TaskVariant::PerTimestep => &HORIZON_PER_TIMESTEP,
        TaskVariant::SingleAnchor => &HORIZON_SINGLE_ANCHOR,
    }
}

impl SearchSpace {
    /// Pretraining and classifier grids that apply to `model`.
    pub fn for_model(model: &ModelConfig) -> Self {
        let mut grids = vec![grid("pretrain.lr", &PRETRAIN_LR), grid("pretrain.weight_decay", &WEIGHT_DECAY)];
        if model.aggregator == AggregatorVariant::CausalConv {
            grids.push(usize_grid("model.causal_blocks", &CAUSAL_BLOCK_CHOICES));
        }
        if model.encoder == EncoderVariant::Original {
            grids.push(usize_grid("model.original_kernel_size", &ORIGINAL_KERNEL_CHOICES));
        }
        grids.push(usize_grid("cpc.horizon", horizon_grid(model.task)));
        if model.task == TaskVariant::PerTimestep {
            grids.push(usize_grid("cpc.num_negatives", &NEGATIVES));
        }
        grids.push(grid("finetune.lr", &CLASSIFIER_LR));
        grids.push(grid("finetune.weight_decay", &WEIGHT_DECAY));
        SearchSpace { grids }
    }

    pub fn size(&self) -> usize {
        self.grids.iter().map(|(_, v)| v.len()).product()
    }

    /// Mixed-radix decoding of a flat grid index, last grid fastest.
    pub fn combination(&self, mut index: usize) -> Combination {
        let mut out = Combination::new();
        for (key, values) in self.grids.iter().rev() {
            out.insert(key.clone(), values[index % values.len()]);
            index /= values.len();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub rank: usize,
    /// Position in the sampling order.
    pub draw: usize,
    pub combination: Combination,
    pub score: f64,
}

/// Draws `budget` distinct grid points uniformly (redrawing duplicates),
/// scores each with `evaluator` and returns them best first. Ties keep the
/// sampling order. A budget above the grid size is clamped.
pub fn sample_combinations(space: &SearchSpace, budget: usize, rng: &mut Rng) -> Result<Vec<Combination>> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let size = space.size();
    if size == 0 {
        return Err(Error::Config("search space is empty".into()));
    }
    let budget = if budget > size {
        warn!("search budget {budget} exceeds the {size} grid points; evaluating all of them");
        size
    } else {
        budget
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let i = rng.below(size);
        if seen.insert(i) {
            out.push(space.combination(i));
        }
    }
    Ok(out)
}

pub fn random_search<F>(space: &SearchSpace, budget: usize, mut evaluator: F, rng: &mut Rng) -> Result<Vec<Ranked>>
where
    F: FnMut(&Combination) -> Result<f64>,
{
    let combos = sample_combinations(space, budget, rng)?;
    let mut ranked = Vec::with_capacity(combos.len());
    for (draw, combination) in combos.into_iter().enumerate() {
        let score = evaluator(&combination)?;
        ranked.push(Ranked {
            rank: 0,
            draw,
            combination,
            score,
        });
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.draw.cmp(&b.draw)));
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ranked)
}
