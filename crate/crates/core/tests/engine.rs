//! Forward values of the engine against direct-loop oracles.

use cpc_core::engine::*;
use cpc_core::engine::Rng;
use cpc_core::Error;
use proptest::prelude::*;

fn normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Direct cross-correlation with explicit padding lookup.
fn naive_conv(x: &[f64], shape: [usize; 3], k: &[f64], c_out: usize, kernel: usize, stride: usize, pad: Padding) -> Vec<f64> {
    let [b, c_in, len] = shape;
    let (l, r) = pad.amounts(kernel);
    let at = |bi: usize, ci: usize, p: isize| -> f64 {
        let q = p - l as isize;
        if (0..len as isize).contains(&q) {
            return x[(bi * c_in + ci) * len + q as usize];
        }
        match pad {
            Padding::Reflect { .. } => {
                let m = if q < 0 { -q } else { 2 * (len as isize - 1) - q };
                x[(bi * c_in + ci) * len + m as usize]
            }
            _ => 0.0,
        }
    };
    let out_len = (len + l + r - kernel) / stride + 1;
    let mut out = vec![0.0; b * c_out * out_len];
    for bi in 0..b {
        for o in 0..c_out {
            for t in 0..out_len {
                let mut s = 0.0;
                for ci in 0..c_in {
                    for j in 0..kernel {
                        s += k[(o * c_in + ci) * kernel + j] * at(bi, ci, (t * stride + j) as isize);
                    }
                }
                out[(bi * c_out + o) * out_len + t] = s;
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn conv1d_matches_direct_loops(
        len in 1usize..24,
        kernel in 1usize..6,
        stride in 1usize..4,
        c_in in 1usize..4,
        c_out in 1usize..4,
        pad_kind in 0usize..4,
        pl in 0usize..3,
        pr in 0usize..3,
        seed in any::<u64>(),
    ) {
        let padding = match pad_kind {
            0 => Padding::Reflect { left: pl, right: pr },
            1 => Padding::Zero { left: pl, right: pr },
            2 => Padding::CausalLeft,
            _ => Padding::None,
        };
        let mut rng = Rng::new(seed);
        let x = Tensor::new(&[2, c_in, len], normal(2 * c_in * len, &mut rng)).unwrap();
        let k = Tensor::new(&[c_out, c_in, kernel], normal(c_out * c_in * kernel, &mut rng)).unwrap();
        let reflect_bad = matches!(padding, Padding::Reflect { .. }) && (pl >= len || pr >= len);
        let expected_len = conv_output_len(len, kernel, stride, padding);
        match conv1d(&x, &k, None, stride, padding) {
            Ok(y) => {
                prop_assert!(!reflect_bad);
                let out_len = expected_len.unwrap();
                prop_assert_eq!(y.shape(), &[2, c_out, out_len]);
                let oracle = naive_conv(x.data(), [2, c_in, len], k.data(), c_out, kernel, stride, padding);
                for (a, b) in y.data().iter().zip(&oracle) {
                    prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
                }
            }
            Err(Error::InvalidPadding(_)) => prop_assert!(reflect_bad),
            Err(Error::KernelTooLarge { .. }) => prop_assert!(expected_len.is_err()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn group_norm_matches_definition() {
    let mut rng = Rng::new(3);
    let (b, c, t, groups) = (2, 6, 5, 3);
    let x = normal(b * c * t, &mut rng);
    let gamma = normal(c, &mut rng);
    let beta = normal(c, &mut rng);
    let y = group_norm(
        &Tensor::new(&[b, c, t], x.clone()).unwrap(),
        groups,
        &Tensor::new(&[c], gamma.clone()).unwrap(),
        &Tensor::new(&[c], beta.clone()).unwrap(),
        NORM_EPS,
    )
    .unwrap();
    let per = c / groups;
    for bi in 0..b {
        for g in 0..groups {
            let vals: Vec<f64> = (g * per..(g + 1) * per)
                .flat_map(|ci| (0..t).map(move |ti| (ci, ti)))
                .map(|(ci, ti)| x[(bi * c + ci) * t + ti])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for ci in g * per..(g + 1) * per {
                for ti in 0..t {
                    let i = (bi * c + ci) * t + ti;
                    let expect = gamma[ci] * (x[i] - mean) / (var + NORM_EPS).sqrt() + beta[ci];
                    assert!((y.data()[i] - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn adam_follows_the_update_rule() {
    let (lr, wd) = (0.01, 0.1);
    let mut params = ParamSet::default();
    params.insert("w", vec![2], vec![1.0, -2.0]).unwrap();
    let mut adam = Adam::new(lr, wd);
    let grads_seq = [[0.5, -1.0], [0.2, 0.3], [-0.4, 0.0]];
    let (mut w, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for (step, g) in grads_seq.iter().enumerate() {
        let grads: Grads = [("w".to_string(), g.to_vec())].into_iter().collect();
        adam.step(&mut params, &grads).unwrap();
        let n = (step + 1) as i32;
        for i in 0..2 {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m[i] / (1.0 - BETA1.powi(n));
            let vh = v[i] / (1.0 - BETA2.powi(n));
            w[i] -= lr * (mh / (vh.sqrt() + ADAM_EPS) + wd * w[i]);
        }
        let got = &params.get("w").unwrap().data;
        for i in 0..2 {
            assert!((got[i] - w[i]).abs() < 1e-15, "step {step}: {} vs {}", got[i], w[i]);
        }
    }
    assert_eq!(adam.steps(), 3);
}

#[test]
fn uniform_logits_cost_log_classes() {
    for k in [2, 3, 11, 40] {
        let logits = Tensor::full(&[4, k], 0.7);
        let loss = softmax_cross_entropy(&logits, &[0, 1, 0, k - 1]).unwrap().item();
        assert!((loss - (k as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn training_step_is_bitwise_reproducible() {
    let run = || {
        let mut rng = Rng::new(8);
        let mut params = ParamSet::default();
        params.insert_kaiming("k", vec![4, 3, 3], 9, &mut rng).unwrap();
        params.insert_kaiming("w", vec![2, 4 * 10], 40, &mut rng).unwrap();
        let x = Tensor::new(&[5, 3, 10], normal(150, &mut rng)).unwrap();
        let mut adam = Adam::new(1e-2, 1e-4);
        for _ in 0..5 {
            let b = params.bind(true);
            let h = dropout(&relu(&conv1d(&x, b.get("k").unwrap(), None, 1, Padding::CausalLeft).unwrap()), 0.2, true, &mut rng).unwrap();
            let logits = linear(&reshape(&h, &[5, 40]).unwrap(), b.get("w").unwrap(), None).unwrap();
            let loss = softmax_cross_entropy(&logits, &[0, 1, 1, 0, 1]).unwrap();
            loss.backward().unwrap();
            adam.step(&mut params, &b.grads()).unwrap();
        }
        params
    };
    let (a, b) = (run(), run());
    for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
        assert!(pa.data.iter().zip(&pb.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
