//! Reverse-mode differentiation engine and numeric primitives.

mod conv;
mod gemm;
mod loss;
mod norm;
mod ops;
mod optim;
mod params;
mod rng;
mod tensor;

pub use conv::{conv1d, conv_output_len, Padding};
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm, group_norm, RunningStats, BN_MOMENTUM, NORM_EPS};
pub use ops::{
    add, add_scalars, concat_rows, dropout, gather_dot, gather_rows, linear, matmul, mean, mul, pointwise, relu,
    reshape, scale, sigmoid, sub, sum, swap_last_two, tanh, Activation,
};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};
pub use params::{Bound, Grads, Param, ParamSet};
pub use rng::Rng;
pub use tensor::Tensor;
