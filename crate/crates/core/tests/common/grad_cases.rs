//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance run. Each case returns its report and the tolerance it must
//! meet.
#![allow(dead_code)]

use super::{check_gradients, random_params, GradReport};
use cpc_core::cpc::{loss_per_timestep, loss_single_anchor, score, ContrastiveBatch};
use cpc_core::engine::*;
use cpc_core::models::{aggregator_gru, init_params, ModelConfig, TaskVariant};
use cpc_core::Result;

pub const OP_TOL: f64 = 1e-4;
pub const GRAPH_TOL: f64 = 1e-3;

pub struct Case {
    pub name: String,
    pub report: GradReport,
    pub tol: f64,
}

impl Case {
    fn new(name: impl Into<String>, report: GradReport, tol: f64) -> Self {
        Case {
            name: name.into(),
            report,
            tol,
        }
    }

    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.worst < self.tol
    }

    pub fn assert_ok(&self) {
        let r = &self.report;
        assert!(r.checked > 0, "{}: nothing checked", self.name);
        assert!(
            self.passed(),
            "{}: relative error {:.3e} at {}[{}] (analytic {}, numeric {})",
            self.name,
            r.worst,
            r.name,
            r.index,
            r.analytic,
            r.numeric
        );
    }
}

/// Projects `y` onto the fixed random tensor `r` so every output element
/// contributes to the scalar.
fn project(y: &Tensor, b: &Bound) -> Result<Tensor> {
    Ok(sum(&mul(y, b.get("r")?)?))
}

fn with_projection(mut shapes: Vec<(&'static str, Vec<usize>)>, out: &[usize], seed: u64) -> ParamSet {
    shapes.push(("r", out.to_vec()));
    let refs: Vec<(&str, &[usize])> = shapes.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    random_params(&refs, &mut Rng::new(seed))
}

pub fn matmul_case() -> Vec<Case> {
    let p = with_projection(vec![("a", vec![4, 3]), ("b", vec![3, 2])], &[4, 2], 1);
    let r = check_gradients(&p, |b| project(&matmul(b.get("a")?, b.get("b")?)?, b), None, 0);
    vec![Case::new("matmul", r, OP_TOL)]
}

pub fn linear_case() -> Vec<Case> {
    let p = with_projection(vec![("x", vec![5, 3]), ("w", vec![4, 3]), ("bias", vec![4])], &[5, 4], 2);
    let r = check_gradients(&p, |b| project(&linear(b.get("x")?, b.get("w")?, Some(b.get("bias")?))?, b), None, 0);
    vec![Case::new("linear", r, OP_TOL)]
}

pub fn conv1d_cases() -> Vec<Case> {
    let cases = [
        (Padding::Reflect { left: 1, right: 1 }, 2, 6),
        (Padding::Zero { left: 2, right: 1 }, 1, 12),
        (Padding::CausalLeft, 1, 12),
        (Padding::None, 3, 3),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (padding, stride, t_out))| {
            let p = with_projection(
                vec![("x", vec![2, 3, 12]), ("k", vec![5, 3, 4]), ("bias", vec![5])],
                &[2, 5, t_out],
                10 + i as u64,
            );
            let r = check_gradients(
                &p,
                |b| project(&conv1d(b.get("x")?, b.get("k")?, Some(b.get("bias")?), stride, padding)?, b),
                None,
                0,
            );
            Case::new(format!("conv1d {padding:?}"), r, OP_TOL)
        })
        .collect()
}

pub fn pointwise_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for f in [Activation::Sigmoid, Activation::Tanh] {
        let p = with_projection(vec![("x", vec![3, 7])], &[3, 7], 3);
        let r = check_gradients(&p, |b| project(&pointwise(b.get("x")?, f), b), None, 0);
        out.push(Case::new(format!("{f:?}"), r, 1e-5));
    }
    // relu away from the kink
    let mut p = with_projection(vec![("x", vec![3, 7])], &[3, 7], 4);
    for v in &mut p.get_mut("x").unwrap().data {
        if v.abs() < 0.1 {
            *v += 0.2;
        }
    }
    let r = check_gradients(&p, |b| project(&relu(b.get("x")?), b), None, 0);
    out.push(Case::new("relu", r, OP_TOL));
    out
}

pub fn dropout_case() -> Vec<Case> {
    let p = with_projection(vec![("x", vec![4, 6])], &[4, 6], 5);
    let r = check_gradients(&p, |b| project(&dropout(b.get("x")?, 0.3, true, &mut Rng::new(77))?, b), None, 0);
    vec![Case::new("dropout", r, OP_TOL)]
}

pub fn group_norm_cases() -> Vec<Case> {
    [1, 2, 4]
        .into_iter()
        .map(|groups| {
            let p = with_projection(vec![("x", vec![2, 4, 5]), ("g", vec![4]), ("beta", vec![4])], &[2, 4, 5], 6);
            let r = check_gradients(
                &p,
                |b| project(&group_norm(b.get("x")?, groups, b.get("g")?, b.get("beta")?, NORM_EPS)?, b),
                None,
                0,
            );
            Case::new(format!("group_norm groups={groups}"), r, OP_TOL)
        })
        .collect()
}

pub fn batch_norm_case() -> Vec<Case> {
    let p = with_projection(vec![("x", vec![6, 3]), ("g", vec![3]), ("beta", vec![3])], &[6, 3], 7);
    let r = check_gradients(
        &p,
        |b| {
            let mut stats = RunningStats::new(3);
            project(&batch_norm(b.get("x")?, b.get("g")?, b.get("beta")?, &mut stats, true)?, b)
        },
        None,
        0,
    );
    vec![Case::new("batch_norm", r, OP_TOL)]
}

pub fn softmax_cross_entropy_case() -> Vec<Case> {
    let p = random_params(&[("logits", &[5, 7])], &mut Rng::new(8));
    let targets = [0, 3, 6, 2, 2];
    let r = check_gradients(&p, |b| softmax_cross_entropy(b.get("logits")?, &targets), None, 0);
    vec![Case::new("softmax_cross_entropy", r, OP_TOL)]
}

pub fn shape_ops_case() -> Vec<Case> {
    let p = with_projection(vec![("x", vec![2, 3, 4]), ("y", vec![3, 4])], &[5, 3], 9);
    let r = check_gradients(
        &p,
        |b| {
            let swapped = swap_last_two(b.get("x")?)?;
            let rows = reshape(&swapped, &[8, 3])?;
            let y = swap_last_two(&reshape(b.get("y")?, &[1, 3, 4])?)?;
            let both = concat_rows(&[rows, reshape(&y, &[4, 3])?])?;
            let picked = gather_rows(&both, &[0, 11, 3, 3, 7])?;
            project(&sub(&scale(&picked, 1.5), &picked)?, b)
        },
        None,
        0,
    );
    vec![Case::new("reshape/swap/concat/gather", r, OP_TOL)]
}

pub fn reductions_case() -> Vec<Case> {
    let p = random_params(&[("a", &[3, 4]), ("b", &[3, 4])], &mut Rng::new(13));
    let r = check_gradients(
        &p,
        |b| {
            let s = add(b.get("a")?, b.get("b")?)?;
            add_scalars(&[mean(&mul(&s, &s)?), sum(&tanh(b.get("a")?)), mean(&sigmoid(b.get("b")?))])
        },
        None,
        0,
    );
    vec![Case::new("add/mean/sum/add_scalars", r, OP_TOL)]
}

pub fn gather_dot_case() -> Vec<Case> {
    let p = with_projection(vec![("q", vec![3, 4]), ("k", vec![5, 4])], &[3, 2], 10);
    let r = check_gradients(
        &p,
        |b| project(&gather_dot(b.get("q")?, b.get("k")?, &[0, 4, 1, 1, 2, 3], 2)?, b),
        None,
        0,
    );
    vec![Case::new("gather_dot", r, OP_TOL)]
}

pub fn score_case() -> Vec<Case> {
    let mut p = random_params(&[("c", &[4, 6]), ("z", &[4, 5])], &mut Rng::new(11));
    p.insert("pred.w01", vec![6, 5], (0..30).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let r = check_gradients(&p, |b| Ok(sum(&score(b.get("c")?, b.get("z")?, 1, 1, b)?)), None, 0);
    vec![Case::new("score", r, 1e-5)]
}

pub fn gru_case() -> Vec<Case> {
    let mut rng = Rng::new(12);
    let (d, h) = (3, 4);
    let mut shapes: Vec<(String, Vec<usize>)> = vec![("z".into(), vec![2, 6, d])];
    for l in 0..2 {
        let input = if l == 0 { d } else { h };
        for g in ["r", "z", "n"] {
            shapes.push((format!("agg.gru{l}.w_i{g}"), vec![h, input]));
            shapes.push((format!("agg.gru{l}.w_h{g}"), vec![h, h]));
            shapes.push((format!("agg.gru{l}.b_i{g}"), vec![h]));
            shapes.push((format!("agg.gru{l}.b_h{g}"), vec![h]));
        }
    }
    shapes.push(("r".into(), vec![2, 6, h]));
    let refs: Vec<(&str, &[usize])> = shapes.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    let p = random_params(&refs, &mut rng);
    let r = check_gradients(
        &p,
        |b| project(&aggregator_gru(b, b.get("z")?, 2, h, 0.2, true, &mut Rng::new(5))?, b),
        None,
        0,
    );
    vec![Case::new("gru unroll", r, GRAPH_TOL)]
}

/// Every single-op case.
pub fn op_cases() -> Vec<Case> {
    let groups: [fn() -> Vec<Case>; 13] = [
        matmul_case,
        linear_case,
        conv1d_cases,
        pointwise_cases,
        dropout_case,
        group_norm_cases,
        batch_norm_case,
        softmax_cross_entropy_case,
        shape_ops_case,
        reductions_case,
        gather_dot_case,
        score_case,
        gru_case,
    ];
    groups.iter().flat_map(|g| g()).collect()
}

fn model_graph_check(config: ModelConfig, batch: usize, len: usize, seed: u64) -> GradReport {
    let mut rng = Rng::new(seed);
    let model = init_params(&config, &mut rng).unwrap();
    let mut p = model.params.clone();
    let x: Vec<f64> = (0..batch * 3 * len).map(|_| rng.normal()).collect();
    p.insert("x", vec![batch, 3, len], x).unwrap();
    check_gradients(
        &p,
        |b| {
            let mut r = Rng::new(seed + 1);
            let (z, c) = model.forward(b, b.get("x")?, true, &mut r)?;
            let cb = ContrastiveBatch::new(z, c, config.horizon, config.num_negatives)?;
            match config.task {
                TaskVariant::PerTimestep => loss_per_timestep(&cb, b, &mut r),
                TaskVariant::SingleAnchor => loss_single_anchor(&cb, b, &mut r),
            }
        },
        Some(6),
        seed,
    )
}

/// Enhanced CPC end to end on [B,3,20] inputs.
pub fn enhanced_graph_case(batch: usize, seed: u64) -> Case {
    let config = ModelConfig {
        horizon: 4,
        num_negatives: 5,
        ..ModelConfig::enhanced()
    };
    Case::new(
        format!("enhanced CPC graph B={batch} T=20"),
        model_graph_check(config, batch, 20, seed),
        GRAPH_TOL,
    )
}

pub fn original_graph_case() -> Case {
    let config = ModelConfig {
        horizon: 3,
        gru_units: 16,
        ..ModelConfig::original()
    };
    Case::new("original CPC graph", model_graph_check(config, 3, 8, 30), GRAPH_TOL)
}
