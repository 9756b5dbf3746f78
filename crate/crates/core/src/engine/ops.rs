//! Differentiable primitives over [`Tensor`].

use super::gemm::{gemm, Mat};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn need(t: &Tensor) -> bool {
    t.is_tracked()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `[m,k] · [k,n] → [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(Mat::new(a.data(), m, k), Mat::new(b.data(), k, n), 0.0, &mut out);
    let (a2, b2) = (a.clone(), b.clone());
    Ok(Tensor::from_op(vec![m, n], out, vec![a.clone(), b.clone()], move |g| {
        let da = need(&a2).then(|| {
            let mut d = vec![0.0; m * k];
            gemm(Mat::new(g, m, n), Mat::new(b2.data(), k, n).t(), 0.0, &mut d);
            d
        });
        let db = need(&b2).then(|| {
            let mut d = vec![0.0; k * n];
            gemm(Mat::new(a2.data(), m, k).t(), Mat::new(g, m, n), 0.0, &mut d);
            d
        });
        vec![da, db]
    }))
}

/// Affine map `x · wᵀ + bias` with `x: [n, in]`, `w: [out, in]`, `bias: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
        return Err(Error::Dimension {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::Dimension {
                op: "linear bias",
                lhs: vec![fout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let mut out = vec![0.0; n * fout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(fout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        Mat::new(x.data(), n, fin),
        Mat::new(w.data(), fout, fin).t(),
        if bias.is_some() { 1.0 } else { 0.0 },
        &mut out,
    );
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (x2, w2, b2) = (x.clone(), w.clone(), bias.cloned());
    Ok(Tensor::from_op(vec![n, fout], out, parents, move |g| {
        let dx = need(&x2).then(|| {
            let mut d = vec![0.0; n * fin];
            gemm(Mat::new(g, n, fout), Mat::new(w2.data(), fout, fin), 0.0, &mut d);
            d
        });
        let dw = need(&w2).then(|| {
            let mut d = vec![0.0; fout * fin];
            gemm(Mat::new(g, n, fout).t(), Mat::new(x2.data(), n, fin), 0.0, &mut d);
            d
        });
        let mut grads = vec![dx, dw];
        if let Some(b) = &b2 {
            grads.push(need(b).then(|| {
                let mut d = vec![0.0; fout];
                for row in g.chunks_exact(fout) {
                    d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                d
            }));
        }
        grads
    }))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let (a2, b2) = (a.clone(), b.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        vec![need(&a2).then(|| g.to_vec()), need(&b2).then(|| g.to_vec())]
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let (a2, b2) = (a.clone(), b.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        vec![
            need(&a2).then(|| g.to_vec()),
            need(&b2).then(|| g.iter().map(|v| -v).collect()),
        ]
    }))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (a2, b2) = (a.clone(), b.clone());
    Ok(Tensor::from_op(a.shape().to_vec(), out, vec![a.clone(), b.clone()], move |g| {
        let da = need(&a2).then(|| g.iter().zip(b2.data()).map(|(g, y)| g * y).collect());
        let db = need(&b2).then(|| g.iter().zip(a2.data()).map(|(g, x)| g * x).collect());
        vec![da, db]
    }))
}

pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let out = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g| {
        vec![Some(g.iter().map(|v| v * factor).collect())]
    })
}

pub fn sum(x: &Tensor) -> Tensor {
    let total = x.data().iter().sum();
    let n = x.numel();
    Tensor::from_op(vec![1], vec![total], vec![x.clone()], move |g| vec![Some(vec![g[0]; n])])
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel();
    let total: f64 = x.data().iter().sum();
    Tensor::from_op(vec![1], vec![total / n as f64], vec![x.clone()], move |g| {
        vec![Some(vec![g[0] / n as f64; n])]
    })
}

/// Sum of scalars; used to add per-offset loss terms.
pub fn add_scalars(terms: &[Tensor]) -> Result<Tensor> {
    if terms.is_empty() {
        return Err(Error::Shape("add_scalars needs at least one term".into()));
    }
    if let Some(bad) = terms.iter().find(|t| t.numel() != 1) {
        return Err(Error::Rank(bad.shape().to_vec()));
    }
    let total = terms.iter().map(|t| t.item()).sum();
    let count = terms.len();
    Ok(Tensor::from_op(vec![1], vec![total], terms.to_vec(), move |g| {
        vec![Some(vec![g[0]]); count]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

pub fn pointwise(x: &Tensor, f: Activation) -> Tensor {
    match f {
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => tanh(x),
    }
}

/// Rectifier; the subgradient at exactly zero is taken as 0.
pub fn relu(x: &Tensor) -> Tensor {
    let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let x2 = x.clone();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g| {
        let d = g
            .iter()
            .zip(x2.data())
            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(d)]
    })
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let y = out.clone();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g| {
        vec![Some(g.iter().zip(&y).map(|(g, s)| g * s * (1.0 - s)).collect())]
    })
}

pub fn tanh(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|v| v.tanh()).collect();
    let y = out.clone();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g| {
        vec![Some(g.iter().zip(&y).map(|(g, t)| g * (1.0 - t * t)).collect())]
    })
}

/// Inverted dropout. Identity when not training or when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g| {
        vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]
    }))
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(Error::Dimension {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(shape.to_vec(), x.to_vec(), vec![x.clone()], |g| vec![Some(g.to_vec())]))
}

fn swap_last(data: &[f64], outer: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        let src = &data[o * rows * cols..(o + 1) * rows * cols];
        let dst = &mut out[o * rows * cols..(o + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

/// `[b, a, c] → [b, c, a]`.
pub fn swap_last_two(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!("swap_last_two expects rank 3, got {:?}", x.shape())));
    }
    let (b, r, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out = swap_last(x.data(), b, r, c);
    Ok(Tensor::from_op(vec![b, c, r], out, vec![x.clone()], move |g| {
        vec![Some(swap_last(g, b, c, r))]
    }))
}

/// Selects rows of a `[rows, width]` tensor. Indices may repeat; gradients of
/// repeated rows add up.
pub fn gather_rows(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!("gather_rows expects rank 2, got {:?}", x.shape())));
    }
    let (rows, width) = (x.shape()[0], x.shape()[1]);
    let mut out = Vec::with_capacity(index.len() * width);
    for &i in index {
        if i >= rows {
            return Err(Error::Index { what: "gather_rows", index: i, limit: rows });
        }
        out.extend_from_slice(&x.data()[i * width..(i + 1) * width]);
    }
    let index = index.to_vec();
    Ok(Tensor::from_op(vec![index.len(), width], out, vec![x.clone()], move |g| {
        let mut d = vec![0.0; rows * width];
        for (k, &i) in index.iter().enumerate() {
            let src = &g[k * width..(k + 1) * width];
            d[i * width..(i + 1) * width].iter_mut().zip(src).for_each(|(a, v)| *a += v);
        }
        vec![Some(d)]
    }))
}

/// Stacks `[r_i, width]` tensors along the first axis.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat_rows of nothing".into()))?;
    if first.rank() != 2 {
        return Err(Error::Shape(format!("concat_rows expects rank 2, got {:?}", first.shape())));
    }
    let width = first.shape()[1];
    let mut out = Vec::new();
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != 2 || p.shape()[1] != width {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        out.extend_from_slice(p.data());
        sizes.push(p.numel());
    }
    let rows = out.len() / width;
    Ok(Tensor::from_op(vec![rows, width], out, parts.to_vec(), move |g| {
        let mut offset = 0;
        sizes
            .iter()
            .map(|&n| {
                let piece = g[offset..offset + n].to_vec();
                offset += n;
                Some(piece)
            })
            .collect()
    }))
}

/// Row-wise dot products against gathered candidates:
/// `out[i, j] = query[i] · keys[index[i * per_row + j]]`.
pub fn gather_dot(query: &Tensor, keys: &Tensor, index: &[usize], per_row: usize) -> Result<Tensor> {
    if query.rank() != 2 || keys.rank() != 2 || query.shape()[1] != keys.shape()[1] {
        return Err(Error::Dimension {
            op: "gather_dot",
            lhs: query.shape().to_vec(),
            rhs: keys.shape().to_vec(),
        });
    }
    let (n, d) = (query.shape()[0], query.shape()[1]);
    let m = keys.shape()[0];
    if index.len() != n * per_row {
        return Err(Error::Shape(format!(
            "gather_dot index has {} entries, expected {n}×{per_row}",
            index.len()
        )));
    }
    if let Some(&bad) = index.iter().find(|&&i| i >= m) {
        return Err(Error::Index { what: "gather_dot", index: bad, limit: m });
    }
    let (q, k) = (query.data(), keys.data());
    let mut out = vec![0.0; n * per_row];
    for i in 0..n {
        let qi = &q[i * d..(i + 1) * d];
        for j in 0..per_row {
            let r = index[i * per_row + j];
            out[i * per_row + j] = dot(qi, &k[r * d..(r + 1) * d]);
        }
    }
    let index = index.to_vec();
    let (q2, k2) = (query.clone(), keys.clone());
    Ok(Tensor::from_op(vec![n, per_row], out, vec![query.clone(), keys.clone()], move |g| {
        let (q, k) = (q2.data(), k2.data());
        let mut dq = need(&q2).then(|| vec![0.0; n * d]);
        let mut dk = need(&k2).then(|| vec![0.0; m * d]);
        for i in 0..n {
            for j in 0..per_row {
                let gij = g[i * per_row + j];
                if gij == 0.0 {
                    continue;
                }
                let r = index[i * per_row + j];
                if let Some(dq) = dq.as_mut() {
                    axpy(gij, &k[r * d..(r + 1) * d], &mut dq[i * d..(i + 1) * d]);
                }
                if let Some(dk) = dk.as_mut() {
                    axpy(gij, &q[i * d..(i + 1) * d], &mut dk[r * d..(r + 1) * d]);
                }
            }
        }
        vec![dq, dk]
    }))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}
