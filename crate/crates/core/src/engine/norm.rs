use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shared backward for "normalise a set of values, then scale/shift":
/// returns `dx` for one set given `dxhat`, `xhat` and the inverse std.
fn normalised_grad(dxhat: &[f64], xhat: &[f64], inv_std: f64) -> Vec<f64> {
    let n = dxhat.len() as f64;
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    dxhat
        .iter()
        .zip(xhat)
        .map(|(d, xh)| inv_std / n * (n * d - s1 - xh * s2))
        .collect()
}

/// Group normalisation over `[B, C, T]`: statistics per (sample, group) across
/// the group's channels and all time steps, then per-channel affine.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!("group_norm expects [B, C, T], got {:?}", x.shape())));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Grouping { channels, groups });
    }
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::Dimension {
            op: "group_norm affine",
            lhs: gamma.shape().to_vec(),
            rhs: beta.shape().to_vec(),
        });
    }
    let per_group = channels / groups * len;
    let xd = x.data();
    let mut xhat = vec![0.0; xd.len()];
    let mut inv = vec![0.0; batch * groups];
    for (s, chunk) in xd.chunks_exact(per_group).enumerate() {
        let mean = chunk.iter().sum::<f64>() / per_group as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv[s] = istd;
        for (o, v) in xhat[s * per_group..(s + 1) * per_group].iter_mut().zip(chunk) {
            *o = (v - mean) * istd;
        }
    }
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![0.0; xd.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for t in off..off + len {
                out[t] = xhat[t] * gd[c] + bd[c];
            }
        }
    }

    let (x2, g2, b2) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let gd = g2.data();
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            let mut dxhat = vec![0.0; g.len()];
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * len;
                    for t in off..off + len {
                        dgamma[c] += g[t] * xhat[t];
                        dbeta[c] += g[t];
                        dxhat[t] = g[t] * gd[c];
                    }
                }
            }
            let dx = x2.is_tracked().then(|| {
                let mut dx = Vec::with_capacity(g.len());
                for s in 0..batch * groups {
                    let r = s * per_group..(s + 1) * per_group;
                    dx.extend(normalised_grad(&dxhat[r.clone()], &xhat[r], inv[s]));
                }
                dx
            });
            vec![dx, g2.is_tracked().then_some(dgamma), b2.is_tracked().then_some(dbeta)]
        },
    ))
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

/// Batch normalisation over `[B, F]`. In training mode the batch statistics
/// are used and the running statistics updated with momentum 0.1 (unbiased
/// variance); in eval mode the running statistics are used.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &mut RunningStats, training: bool) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("batch_norm expects [B, F], got {:?}", x.shape())));
    }
    let (batch, feats) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [feats] || beta.shape() != [feats] || stats.mean.len() != feats {
        return Err(Error::Dimension {
            op: "batch_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    if training && batch < 2 {
        return Err(Error::DegenerateBatch(batch));
    }
    let xd = x.data();
    let (mean, inv): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0.0; feats];
        for row in xd.chunks_exact(feats) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= batch as f64);
        let mut ss = vec![0.0; feats];
        for row in xd.chunks_exact(feats) {
            for f in 0..feats {
                ss[f] += (row[f] - mean[f]).powi(2);
            }
        }
        for f in 0..feats {
            stats.mean[f] = (1.0 - BN_MOMENTUM) * stats.mean[f] + BN_MOMENTUM * mean[f];
            stats.var[f] = (1.0 - BN_MOMENTUM) * stats.var[f] + BN_MOMENTUM * ss[f] / (batch - 1) as f64;
        }
        let inv = ss.iter().map(|s| 1.0 / (s / batch as f64 + NORM_EPS).sqrt()).collect();
        (mean, inv)
    } else {
        let inv = stats.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        (stats.mean.clone(), inv)
    };
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for i in 0..batch {
        for f in 0..feats {
            let k = i * feats + f;
            xhat[k] = (xd[k] - mean[f]) * inv[f];
            out[k] = xhat[k] * gd[f] + bd[f];
        }
    }
    let (x2, g2, b2) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let gd = g2.data();
            let mut dgamma = vec![0.0; feats];
            let mut dbeta = vec![0.0; feats];
            for i in 0..batch {
                for f in 0..feats {
                    let k = i * feats + f;
                    dgamma[f] += g[k] * xhat[k];
                    dbeta[f] += g[k];
                }
            }
            let dx = x2.is_tracked().then(|| {
                let mut dx = vec![0.0; g.len()];
                for f in 0..feats {
                    if training {
                        let dxh: Vec<f64> = (0..batch).map(|i| g[i * feats + f] * gd[f]).collect();
                        let xh: Vec<f64> = (0..batch).map(|i| xhat[i * feats + f]).collect();
                        for (i, v) in normalised_grad(&dxh, &xh, inv[f]).into_iter().enumerate() {
                            dx[i * feats + f] = v;
                        }
                    } else {
                        for i in 0..batch {
                            dx[i * feats + f] = g[i * feats + f] * gd[f] * inv[f];
                        }
                    }
                }
                dx
            });
            vec![dx, g2.is_tracked().then_some(dgamma), b2.is_tracked().then_some(dbeta)]
        },
    ))
}
