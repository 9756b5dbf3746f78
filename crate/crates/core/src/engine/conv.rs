//! 1D cross-correlation over `[batch, channels, time]` via im2col + GEMM.

use super::gemm::{gemm, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Mirror interior samples (edge sample not repeated).
    Reflect { left: usize, right: usize },
    Zero { left: usize, right: usize },
    /// `kernel - 1` zeros on the left only.
    CausalLeft,
    None,
}

impl Padding {
    pub fn amounts(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Reflect { left, right } | Padding::Zero { left, right } => (left, right),
            Padding::CausalLeft => (kernel.saturating_sub(1), 0),
            Padding::None => (0, 0),
        }
    }
}

/// Output length for the given geometry, or an error when the kernel does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("conv stride must be at least 1".into()));
    }
    let (l, r) = padding.amounts(kernel);
    let padded = len + l + r;
    if kernel == 0 || kernel > padded {
        return Err(Error::KernelTooLarge { kernel, padded });
    }
    Ok((padded - kernel) / stride + 1)
}

/// For each padded position, the source sample index (or `None` for a zero).
fn source_map(len: usize, kernel: usize, padding: Padding) -> Result<Vec<Option<usize>>> {
    let (l, r) = padding.amounts(kernel);
    if let Padding::Reflect { left, right } = padding {
        if left >= len || right >= len {
            return Err(Error::InvalidPadding(format!(
                "reflect padding ({left}, {right}) needs both sides below the length {len}"
            )));
        }
    }
    let reflect = matches!(padding, Padding::Reflect { .. });
    Ok((0..len + l + r)
        .map(|p| {
            let q = p as isize - l as isize;
            if (0..len as isize).contains(&q) {
                Some(q as usize)
            } else if reflect {
                let m = if q < 0 { -q } else { 2 * (len as isize - 1) - q };
                Some(m as usize)
            } else {
                None
            }
        })
        .collect())
}

struct Geometry {
    batch: usize,
    c_in: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
    src: Vec<Option<usize>>,
}

impl Geometry {
    /// `[c_in·kernel, batch·out_len]` column matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.batch * self.out_len;
        let mut out = vec![0.0; self.c_in * self.kernel * cols];
        for ci in 0..self.c_in {
            for k in 0..self.kernel {
                let row = &mut out[(ci * self.kernel + k) * cols..(ci * self.kernel + k + 1) * cols];
                for b in 0..self.batch {
                    let xs = &x[(b * self.c_in + ci) * self.len..(b * self.c_in + ci + 1) * self.len];
                    for t in 0..self.out_len {
                        if let Some(s) = self.src[t * self.stride + k] {
                            row[b * self.out_len + t] = xs[s];
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im(&self, cols_grad: &[f64]) -> Vec<f64> {
        let cols = self.batch * self.out_len;
        let mut dx = vec![0.0; self.batch * self.c_in * self.len];
        for ci in 0..self.c_in {
            for k in 0..self.kernel {
                let row = &cols_grad[(ci * self.kernel + k) * cols..(ci * self.kernel + k + 1) * cols];
                for b in 0..self.batch {
                    let off = (b * self.c_in + ci) * self.len;
                    for t in 0..self.out_len {
                        if let Some(s) = self.src[t * self.stride + k] {
                            dx[off + s] += row[b * self.out_len + t];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// `input: [B, C_in, T]`, `kernels: [C_out, C_in, K]`, `bias: [C_out]`.
pub fn conv1d(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>, stride: usize, padding: Padding) -> Result<Tensor> {
    if input.rank() != 3 || kernels.rank() != 3 || input.shape()[1] != kernels.shape()[1] {
        return Err(Error::Dimension {
            op: "conv1d",
            lhs: input.shape().to_vec(),
            rhs: kernels.shape().to_vec(),
        });
    }
    let (batch, c_in, len) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kernel) = (kernels.shape()[0], kernels.shape()[2]);
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::Dimension {
                op: "conv1d bias",
                lhs: vec![c_out],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let src = source_map(len, kernel, padding)?;
    let out_len = conv_output_len(len, kernel, stride, padding)?;
    let geo = Geometry { batch, c_in, len, kernel, stride, out_len, src };

    let cols = geo.im2col(input.data());
    let ncols = batch * out_len;
    let mut y = vec![0.0; c_out * ncols];
    gemm(
        Mat::new(kernels.data(), c_out, c_in * kernel),
        Mat::new(&cols, c_in * kernel, ncols),
        0.0,
        &mut y,
    );
    drop(cols);
    let mut out = vec![0.0; batch * c_out * out_len];
    for co in 0..c_out {
        let bv = bias.map_or(0.0, |b| b.data()[co]);
        for b in 0..batch {
            let dst = &mut out[(b * c_out + co) * out_len..(b * c_out + co + 1) * out_len];
            let srow = &y[co * ncols + b * out_len..co * ncols + (b + 1) * out_len];
            dst.iter_mut().zip(srow).for_each(|(d, s)| *d = s + bv);
        }
    }

    let mut parents = vec![input.clone(), kernels.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (x2, w2, b2) = (input.clone(), kernels.clone(), bias.cloned());
    Ok(Tensor::from_op(vec![batch, c_out, out_len], out, parents, move |g| {
        // g: [B, C_out, T_out] -> [C_out, B·T_out]
        let mut gy = vec![0.0; c_out * ncols];
        for b in 0..batch {
            for co in 0..c_out {
                let src = &g[(b * c_out + co) * out_len..(b * c_out + co + 1) * out_len];
                gy[co * ncols + b * out_len..co * ncols + (b + 1) * out_len].copy_from_slice(src);
            }
        }
        let dw = w2.is_tracked().then(|| {
            let cols = geo.im2col(x2.data());
            let mut d = vec![0.0; c_out * c_in * kernel];
            gemm(
                Mat::new(&gy, c_out, ncols),
                Mat::new(&cols, c_in * kernel, ncols).t(),
                0.0,
                &mut d,
            );
            d
        });
        let dx = x2.is_tracked().then(|| {
            let mut dcols = vec![0.0; c_in * kernel * ncols];
            gemm(
                Mat::new(w2.data(), c_out, c_in * kernel).t(),
                Mat::new(&gy, c_out, ncols),
                0.0,
                &mut dcols,
            );
            geo.col2im(&dcols)
        });
        let mut grads = vec![dx, dw];
        if let Some(b) = &b2 {
            grads.push(b.is_tracked().then(|| gy.chunks_exact(ncols).map(|r| r.iter().sum()).collect()));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        assert_eq!(conv_output_len(100, 4, 2, Padding::Reflect { left: 1, right: 1 }).unwrap(), 50);
        assert_eq!(conv_output_len(100, 1, 1, Padding::None).unwrap(), 100);
        assert_eq!(conv_output_len(7, 3, 1, Padding::CausalLeft).unwrap(), 7);
        assert!(matches!(
            conv_output_len(3, 5, 1, Padding::None),
            Err(Error::KernelTooLarge { kernel: 5, padded: 3 })
        ));
    }

    #[test]
    fn reflect_mirrors_without_repeating_edge() {
        let src = source_map(4, 4, Padding::Reflect { left: 2, right: 1 }).unwrap();
        let got: Vec<usize> = src.into_iter().map(Option::unwrap).collect();
        assert_eq!(got, vec![2, 1, 0, 1, 2, 3, 2]);
        assert!(matches!(
            source_map(3, 4, Padding::Reflect { left: 3, right: 0 }),
            Err(Error::InvalidPadding(_))
        ));
    }

    #[test]
    fn hand_computed_cross_correlation() {
        // one channel, kernel [1, 2], no flip: y_t = x_t + 2 x_{t+1}
        let x = Tensor::new(&[1, 1, 4], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::new(&[1, 1, 2], vec![1., 2.]).unwrap();
        let b = Tensor::new(&[1], vec![0.5]).unwrap();
        let y = conv1d(&x, &w, Some(&b), 1, Padding::None).unwrap();
        assert_eq!(y.data(), &[5.5, 8.5, 11.5]);
        let yc = conv1d(&x, &w, None, 1, Padding::CausalLeft).unwrap();
        assert_eq!(yc.data(), &[2., 5., 8., 11.]);
    }
}
