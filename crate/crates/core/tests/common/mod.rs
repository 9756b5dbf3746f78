//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod arch;
pub mod grad_cases;
pub mod toy_cpc;

use cpc_core::engine::{Bound, ParamSet, Rng, Tensor};
use cpc_core::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this in both the analytic and the numeric value
/// are compared absolutely rather than relatively.
pub const FD_FLOOR: f64 = 1e-7;

/// Largest relative disagreement between backprop and central finite
/// differences, with where it happened.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub worst: f64,
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn eval(params: &ParamSet, f: &impl Fn(&Bound) -> Result<Tensor>) -> f64 {
    f(&params.bind(false)).expect("loss evaluation").item()
}

/// Compares the gradient of the scalar `f` with respect to every tensor in
/// `params` against central differences. With `per_tensor = Some(k)` only
/// `k` random entries of each tensor are probed.
pub fn check_gradients(
    params: &ParamSet,
    f: impl Fn(&Bound) -> Result<Tensor>,
    per_tensor: Option<usize>,
    seed: u64,
) -> GradReport {
    let bound = params.bind(true);
    let loss = f(&bound).expect("loss evaluation");
    loss.backward().expect("backward");
    let grads = bound.grads();
    let mut rng = Rng::new(seed);
    let mut work = params.clone();
    let mut report = GradReport {
        worst: 0.0,
        name: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).unwrap().data.len();
        let idx: Vec<usize> = match per_tensor {
            Some(k) if k < n => rng.sample_indices(n, k),
            _ => (0..n).collect(),
        };
        let g = grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; n]);
        for i in idx {
            let orig = work.get(&name).unwrap().data[i];
            work.get_mut(&name).unwrap().data[i] = orig + FD_STEP;
            let up = eval(&work, &f);
            work.get_mut(&name).unwrap().data[i] = orig - FD_STEP;
            let down = eval(&work, &f);
            work.get_mut(&name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(g[i], numeric);
            report.checked += 1;
            if e > report.worst {
                report = GradReport {
                    worst: e,
                    name: name.clone(),
                    index: i,
                    analytic: g[i],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    report
}

/// Parameter set of normally distributed tensors.
pub fn random_params(shapes: &[(&str, &[usize])], rng: &mut Rng) -> ParamSet {
    let mut p = ParamSet::default();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        p.insert(name, shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
            .unwrap();
    }
    p
}
