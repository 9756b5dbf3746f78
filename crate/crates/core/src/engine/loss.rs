use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean over rows of `-log softmax(logits)[target]`, via log-sum-exp.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!("logits must be [N, K], got {:?}", logits.shape())));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Index { what: "cross-entropy target", index: bad, limit: k });
    }
    let mut probs = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, row) in logits.data().chunks_exact(k).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[targets[i]];
        for (p, v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
    }
    let targets = targets.to_vec();
    Ok(Tensor::from_op(vec![1], vec![total / n as f64], vec![logits.clone()], move |g| {
        let s = g[0] / n as f64;
        let mut d = probs;
        for (i, &t) in targets.iter().enumerate() {
            d[i * k + t] -= 1.0;
        }
        d.iter_mut().for_each(|v| *v *= s);
        vec![Some(d)]
    }))
}
