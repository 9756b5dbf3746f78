//! Model construction shortcuts and the bitwise causality oracle.
#![allow(dead_code)]

use cpc_core::engine::{Rng, Tensor};
use cpc_core::models::*;

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn model(config: ModelConfig, seed: u64) -> ModelParams {
    init_params(&config, &mut Rng::new(seed)).unwrap()
}

pub fn encode(m: &ModelParams, x: &Tensor) -> Tensor {
    m.encode(&m.params.bind(false), x, false, &mut Rng::new(0)).unwrap()
}

pub fn aggregate(m: &ModelParams, z: &Tensor) -> Tensor {
    m.aggregate(&m.params.bind(false), z, false, &mut Rng::new(0)).unwrap()
}

/// Perturbs every position after `t`, for each `t`, and reports the first
/// context up to `t` whose bits changed, or a perturbation that changed
/// nothing at all.
pub fn causality_violation(m: &ModelParams, z: &Tensor) -> Option<String> {
    let (b, steps, d) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let base = aggregate(m, z);
    let width = base.shape()[2];
    let mut rng = Rng::new(99);
    for t in 0..steps {
        let mut data = z.to_vec();
        for w in 0..b {
            for s in t + 1..steps {
                for j in 0..d {
                    data[(w * steps + s) * d + j] += 10.0 * rng.normal();
                }
            }
        }
        let perturbed = aggregate(m, &Tensor::new(z.shape(), data).unwrap());
        for w in 0..b {
            for s in 0..=t {
                let at = (w * steps + s) * width;
                let lhs: Vec<u64> = base.data()[at..at + width].iter().map(|v| v.to_bits()).collect();
                let rhs: Vec<u64> = perturbed.data()[at..at + width].iter().map(|v| v.to_bits()).collect();
                if lhs != rhs {
                    return Some(format!("context at step {s} changed after perturbing beyond {t}"));
                }
            }
        }
        if t + 1 < steps && bits(&base) == bits(&perturbed) {
            return Some(format!("perturbation had no effect at t={t}"));
        }
    }
    None
}
