//! Adam with bias correction and decoupled weight decay.

use std::collections::BTreeMap;

use super::params::{Grads, ParamSet};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    shape: Vec<usize>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params`. Parameters without a
    /// gradient entry are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        for (name, p) in params.iter() {
            if let Some(m) = self.moments.get(name) {
                if m.shape != p.shape {
                    return Err(Error::StateMismatch {
                        name: name.to_string(),
                        reason: format!("state shape {:?}, parameter shape {:?}", m.shape, p.shape),
                    });
                }
            }
            if let Some(g) = grads.get(name) {
                if g.len() != p.data.len() {
                    return Err(Error::StateMismatch {
                        name: name.to_string(),
                        reason: format!("gradient has {} values, parameter {}", g.len(), p.data.len()),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, wd, eps) = (self.beta1, self.beta2, self.lr, self.weight_decay, self.eps);
        for (name, p) in params.iter_mut() {
            let m = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                shape: p.shape.clone(),
                first: vec![0.0; p.data.len()],
                second: vec![0.0; p.data.len()],
            });
            let g = grads.get(name);
            for i in 0..p.data.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m.first[i] = b1 * m.first[i] + (1.0 - b1) * gi;
                m.second[i] = b2 * m.second[i] + (1.0 - b2) * gi * gi;
                let mhat = m.first[i] / bc1;
                let vhat = m.second[i] / bc2;
                let decay = if wd > 0.0 { lr * wd * p.data[i] } else { 0.0 };
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps) + decay;
            }
        }
        Ok(())
    }
}
