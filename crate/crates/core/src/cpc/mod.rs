//! Contrastive future-latent prediction.
//!
//! A score between a context vector `c_t` and a latent `z` is the bilinear
//! form `c_tᵀ W_k z` with one matrix per prediction offset `k`. Both loss
//! variants are cross-entropies over candidate sets whose first entry is the
//! true future latent; they differ only in how anchors and negatives are
//! chosen, which is captured by a [`CandidatePlan`].

use crate::engine::{add_scalars, gather_dot, gather_rows, matmul, reshape, softmax_cross_entropy, Bound, Rng, Tensor};
use crate::error::{Error, Result};
use crate::models::pred_name;

/// Latents and contexts of one batch of windows.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    /// `[B, T', z_dim]`
    pub z: Tensor,
    /// `[B, T', context_dim]`
    pub c: Tensor,
    pub horizon: usize,
    pub num_negatives: usize,
}

impl ContrastiveBatch {
    pub fn new(z: Tensor, c: Tensor, horizon: usize, num_negatives: usize) -> Result<Self> {
        if z.rank() != 3 || c.rank() != 3 || z.shape()[..2] != c.shape()[..2] {
            return Err(Error::Dimension {
                op: "contrastive batch",
                lhs: z.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let b = ContrastiveBatch { z, c, horizon, num_negatives };
        b.check()?;
        Ok(b)
    }

    pub fn windows(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.z.shape()[1]
    }

    /// Anchors `t` with `t + horizon ≤ T' − 1`.
    pub fn anchor_count(&self) -> usize {
        self.steps() - self.horizon
    }

    fn check(&self) -> Result<()> {
        if self.windows() < 2 {
            return Err(Error::BatchTooSmall(self.windows()));
        }
        if self.horizon == 0 || self.horizon >= self.steps() {
            return Err(Error::Horizon {
                horizon: self.horizon,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// Which context rows act as anchors and which latent rows are scored
/// against each of them. Rows index the flattened `[B·T', ·]` layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidatePlan {
    pub anchors: Vec<usize>,
    /// Candidates per (anchor, step); the positive is always first.
    pub per_row: usize,
    /// `candidates[k-1]` has `anchors.len() × per_row` latent rows for offset `k`.
    pub candidates: Vec<Vec<usize>>,
}

/// One anchor `t` drawn uniformly from `0..T'−K` and shared by the batch; the
/// negatives of window `b` at offset `k` are the latents of every other window
/// at `t + k`.
pub fn plan_single_anchor(windows: usize, steps: usize, horizon: usize, rng: &mut Rng) -> Result<CandidatePlan> {
    if windows < 2 {
        return Err(Error::BatchTooSmall(windows));
    }
    if horizon == 0 || horizon >= steps {
        return Err(Error::Horizon { horizon, steps });
    }
    let t = rng.below(steps - horizon);
    let anchors = (0..windows).map(|b| b * steps + t).collect();
    let candidates = (1..=horizon)
        .map(|k| {
            let mut rows = Vec::with_capacity(windows * windows);
            for b in 0..windows {
                rows.push(b * steps + t + k);
                rows.extend((0..windows).filter(|&o| o != b).map(|o| o * steps + t + k));
            }
            rows
        })
        .collect();
    Ok(CandidatePlan {
        anchors,
        per_row: windows,
        candidates,
    })
}

/// Every `(b, t)` with `t + K ≤ T' − 1` is an anchor. For each offset, `n`
/// negatives are drawn without replacement from the `(B−1)·T'` latents of the
/// other windows, fresh for every term.
pub fn plan_per_timestep(
    windows: usize,
    steps: usize,
    horizon: usize,
    negatives: usize,
    rng: &mut Rng,
) -> Result<CandidatePlan> {
    if windows < 2 {
        return Err(Error::BatchTooSmall(windows));
    }
    if horizon == 0 || horizon >= steps {
        return Err(Error::Horizon { horizon, steps });
    }
    let pool = (windows - 1) * steps;
    if negatives > pool {
        return Err(Error::InsufficientNegatives {
            requested: negatives,
            available: pool,
        });
    }
    let anchor_steps = steps - horizon;
    let anchors: Vec<usize> = (0..windows)
        .flat_map(|b| (0..anchor_steps).map(move |t| b * steps + t))
        .collect();
    let per_row = negatives + 1;
    let mut candidates = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let mut rows = Vec::with_capacity(anchors.len() * per_row);
        for b in 0..windows {
            for t in 0..anchor_steps {
                rows.push(b * steps + t + k);
                for p in rng.sample_indices(pool, negatives) {
                    // skip over window b's block of rows
                    let row = if p < b * steps { p } else { p + steps };
                    rows.push(row);
                }
            }
        }
        candidates.push(rows);
    }
    Ok(CandidatePlan {
        anchors,
        per_row,
        candidates,
    })
}

fn prediction_matrix<'a>(bound: &'a Bound, k: usize, horizon: usize) -> Result<&'a Tensor> {
    if k == 0 || k > horizon {
        return Err(Error::Index {
            what: "prediction offset",
            index: k,
            limit: horizon,
        });
    }
    bound.get(&pred_name(k))
}

/// Paired bilinear scores `c_iᵀ W_k z_i` for `c: [N, ctx]`, `z: [N, z_dim]`.
pub fn score(c: &Tensor, z: &Tensor, k: usize, horizon: usize, bound: &Bound) -> Result<Tensor> {
    let w = prediction_matrix(bound, k, horizon)?;
    if c.rank() != 2 || z.rank() != 2 || c.shape()[0] != z.shape()[0] {
        return Err(Error::Dimension {
            op: "score",
            lhs: c.shape().to_vec(),
            rhs: z.shape().to_vec(),
        });
    }
    let n = c.shape()[0];
    let pred = matmul(c, w)?;
    let index: Vec<usize> = (0..n).collect();
    reshape(&gather_dot(&pred, z, &index, 1)?, &[n])
}

/// Σ over offsets of the mean cross-entropy over anchors, for a given plan.
pub fn loss_from_plan(batch: &ContrastiveBatch, plan: &CandidatePlan, bound: &Bound) -> Result<Tensor> {
    let (b, t) = (batch.windows(), batch.steps());
    let z = reshape(&batch.z, &[b * t, batch.z.shape()[2]])?;
    let c = reshape(&batch.c, &[b * t, batch.c.shape()[2]])?;
    let anchors = gather_rows(&c, &plan.anchors)?;
    let targets = vec![0usize; plan.anchors.len()];
    let mut terms = Vec::with_capacity(plan.candidates.len());
    for (i, rows) in plan.candidates.iter().enumerate() {
        let w = prediction_matrix(bound, i + 1, batch.horizon)?;
        let pred = matmul(&anchors, w)?;
        let logits = gather_dot(&pred, &z, rows, plan.per_row)?;
        terms.push(softmax_cross_entropy(&logits, &targets)?);
    }
    add_scalars(&terms)
}

pub fn loss_single_anchor(batch: &ContrastiveBatch, bound: &Bound, rng: &mut Rng) -> Result<Tensor> {
    batch.check()?;
    let plan = plan_single_anchor(batch.windows(), batch.steps(), batch.horizon, rng)?;
    loss_from_plan(batch, &plan, bound)
}

pub fn loss_per_timestep(batch: &ContrastiveBatch, bound: &Bound, rng: &mut Rng) -> Result<Tensor> {
    batch.check()?;
    let plan = plan_per_timestep(
        batch.windows(),
        batch.steps(),
        batch.horizon,
        batch.num_negatives,
        rng,
    )?;
    loss_from_plan(batch, &plan, bound)
}
