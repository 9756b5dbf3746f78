//! Encoders and aggregators. All functions read their weights from a
//! [`Bound`] created from [`ModelParams`].

use serde::{Deserialize, Serialize};

use super::config::{
    AggregatorVariant, EncoderVariant, ModelConfig, CONTEXT_DIM, ENHANCED_FILTERS, ENHANCED_KERNELS, ENHANCED_STRIDES,
    INPUT_CHANNELS, ORIGINAL_FILTERS,
};
use crate::engine::{
    add, concat_rows, conv1d, dropout, gather_rows, group_norm, linear, mul, relu, reshape, sigmoid, sub,
    swap_last_two, tanh, Bound, ParamSet, Padding, Rng, Tensor, NORM_EPS,
};
use crate::error::{Error, Result};

/// Backbone weights (encoder, aggregator and the per-offset prediction
/// matrices) together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: ParamSet,
}

pub fn pred_name(step: usize) -> String {
    format!("pred.w{step:02}")
}

pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let mut p = ParamSet::default();
    match config.encoder {
        EncoderVariant::Enhanced => {
            let mut c_in = INPUT_CHANNELS;
            for (i, (&f, &k)) in ENHANCED_FILTERS.iter().zip(&ENHANCED_KERNELS).enumerate() {
                p.insert_kaiming(&format!("enc.conv{}.w", i + 1), vec![f, c_in, k], c_in * k, rng)?;
                p.insert_const(&format!("enc.conv{}.b", i + 1), vec![f], 0.0)?;
                c_in = f;
            }
        }
        EncoderVariant::Original => {
            let k = config.original_kernel_size;
            let mut c_in = INPUT_CHANNELS;
            for (i, &f) in ORIGINAL_FILTERS.iter().enumerate() {
                p.insert_kaiming(&format!("enc.conv{}.w", i + 1), vec![f, c_in, k], c_in * k, rng)?;
                p.insert_const(&format!("enc.conv{}.b", i + 1), vec![f], 0.0)?;
                c_in = f;
            }
        }
    }
    let z_dim = config.z_dim();
    match config.aggregator {
        AggregatorVariant::CausalConv => {
            if z_dim != CONTEXT_DIM {
                p.insert_kaiming("agg.proj.w", vec![CONTEXT_DIM, z_dim, 1], z_dim, rng)?;
                p.insert_const("agg.proj.b", vec![CONTEXT_DIM], 0.0)?;
            }
            for (i, &k) in config.causal_kernels().iter().enumerate() {
                let pre = format!("agg.block{}", i + 1);
                p.insert_kaiming(&format!("{pre}.w"), vec![CONTEXT_DIM, CONTEXT_DIM, k], CONTEXT_DIM * k, rng)?;
                p.insert_const(&format!("{pre}.b"), vec![CONTEXT_DIM], 0.0)?;
                p.insert_const(&format!("{pre}.gamma"), vec![CONTEXT_DIM], 1.0)?;
                p.insert_const(&format!("{pre}.beta"), vec![CONTEXT_DIM], 0.0)?;
            }
        }
        AggregatorVariant::Gru => {
            let h = config.gru_units;
            let mut input = z_dim;
            for l in 0..config.gru_layers {
                for gate in ["r", "z", "n"] {
                    p.insert_kaiming(&format!("agg.gru{l}.w_i{gate}"), vec![h, input], input, rng)?;
                    p.insert_kaiming(&format!("agg.gru{l}.w_h{gate}"), vec![h, h], h, rng)?;
                    p.insert_const(&format!("agg.gru{l}.b_i{gate}"), vec![h], 0.0)?;
                    p.insert_const(&format!("agg.gru{l}.b_h{gate}"), vec![h], 0.0)?;
                }
                input = h;
            }
        }
    }
    // Scores are bilinear in c and z, so a fan-in bound would give scores
    // with a spread of tens; this bound keeps their initial variance near 1/4.
    let ctx = config.context_dim();
    let bound = (3.0 / (ctx * z_dim) as f64).sqrt();
    for k in 1..=config.horizon {
        let w = (0..ctx * z_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        p.insert(&pred_name(k), vec![ctx, z_dim], w)?;
    }
    Ok(ModelParams {
        config: config.clone(),
        params: p,
    })
}

fn layer(
    x: &Tensor,
    bound: &Bound,
    name: &str,
    stride: usize,
    padding: Padding,
    p_drop: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let y = conv1d(
        x,
        bound.get(&format!("{name}.w"))?,
        Some(bound.get(&format!("{name}.b"))?),
        stride,
        padding,
    )?;
    dropout(&relu(&y), p_drop, training, rng)
}

fn check_input(x: &Tensor) -> Result<(usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!("encoder input must be [B, 3, T], got {:?}", x.shape())));
    }
    if x.shape()[1] != INPUT_CHANNELS {
        return Err(Error::Shape(format!(
            "encoder expects {INPUT_CHANNELS} channels, got {}",
            x.shape()[1]
        )));
    }
    Ok((x.shape()[0], x.shape()[2]))
}

/// `[B, 3, T] → [B, T/2, 256]`.
pub fn encoder_enhanced(bound: &Bound, x: &Tensor, p_drop: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    let (_, len) = check_input(x)?;
    if len < 4 || len % 2 != 0 {
        return Err(Error::Shape(format!("enhanced encoder needs an even length ≥ 4, got {len}")));
    }
    let mut h = x.clone();
    for i in 0..ENHANCED_FILTERS.len() {
        let padding = if ENHANCED_KERNELS[i] > 1 {
            Padding::Reflect { left: 1, right: 1 }
        } else {
            Padding::None
        };
        h = layer(&h, bound, &format!("enc.conv{}", i + 1), ENHANCED_STRIDES[i], padding, p_drop, training, rng)?;
    }
    swap_last_two(&h)
}

/// `[B, 3, T] → [B, T, 128]` with zero "same" padding.
pub fn encoder_original(
    bound: &Bound,
    x: &Tensor,
    kernel: usize,
    p_drop: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (_, len) = check_input(x)?;
    if kernel > len {
        return Err(Error::KernelTooLarge { kernel, padded: len });
    }
    let half = (kernel - 1) / 2;
    let padding = Padding::Zero { left: half, right: kernel - 1 - half };
    let mut h = x.clone();
    for i in 0..ORIGINAL_FILTERS.len() {
        h = layer(&h, bound, &format!("enc.conv{}", i + 1), 1, padding, p_drop, training, rng)?;
    }
    swap_last_two(&h)
}

/// Stacked causal conv blocks: `[B, T', z_dim] → [B, T', 256]`.
///
/// Each block is `relu(norm(causal_conv(x))) + x`, with a 1×1
/// projection ahead of the first block when `z_dim != 256`.
pub fn aggregator_causal_conv(bound: &Bound, z: &Tensor, blocks: usize) -> Result<Tensor> {
    if !super::config::CAUSAL_BLOCK_CHOICES.contains(&blocks) {
        return Err(Error::Config(format!("causal_blocks must be one of 2, 4, 6; got {blocks}")));
    }
    if z.rank() != 3 || z.shape()[1] == 0 {
        return Err(Error::Shape(format!("aggregator input must be [B, T', D], got {:?}", z.shape())));
    }
    let mut h = swap_last_two(z)?;
    if h.shape()[1] != CONTEXT_DIM {
        h = conv1d(&h, bound.get("agg.proj.w")?, Some(bound.get("agg.proj.b")?), 1, Padding::None)?;
    }
    for (i, _) in super::config::CAUSAL_KERNELS[..blocks].iter().enumerate() {
        let pre = format!("agg.block{}", i + 1);
        let y = conv1d(
            &h,
            bound.get(&format!("{pre}.w"))?,
            Some(bound.get(&format!("{pre}.b"))?),
            1,
            Padding::CausalLeft,
        )?;
        let y = norm_per_step(&y, bound.get(&format!("{pre}.gamma"))?, bound.get(&format!("{pre}.beta"))?)?;
        h = add(&relu(&y), &h)?;
    }
    swap_last_two(&h)
}

/// Single-group norm over the channels of each position separately, so the
/// statistics of step `t` never see later steps. `[B, C, T] → [B, C, T]`.
fn norm_per_step(y: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (b, c, t) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let rows = reshape(&swap_last_two(y)?, &[b * t, c, 1])?;
    let normed = group_norm(&rows, 1, gamma, beta, NORM_EPS)?;
    swap_last_two(&reshape(&normed, &[b, t, c])?)
}

/// Multi-layer GRU from a zero state: `[B, T', z_dim] → [B, T', units]`.
///
/// Gates: `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, likewise `u` for the update
/// gate, candidate `n = tanh(W_in x + b_in + W_hn (r ⊙ h) + b_hn)` and
/// `h' = n + u ⊙ (h − n)`. Dropout is applied between layers only.
pub fn aggregator_gru(
    bound: &Bound,
    z: &Tensor,
    layers: usize,
    units: usize,
    p_drop: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    if z.rank() != 3 || z.shape()[1] == 0 {
        return Err(Error::Shape(format!("aggregator input must be [B, T', D], got {:?}", z.shape())));
    }
    let (batch, steps, dim) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let mut input = reshape(z, &[batch * steps, dim])?;
    for l in 0..layers {
        let w = |n: &str| bound.get(&format!("agg.gru{l}.{n}"));
        if l > 0 {
            input = dropout(&input, p_drop, training, rng)?;
        }
        let xr = linear(&input, w("w_ir")?, Some(w("b_ir")?))?;
        let xu = linear(&input, w("w_iz")?, Some(w("b_iz")?))?;
        let xn = linear(&input, w("w_in")?, Some(w("b_in")?))?;
        let mut h = Tensor::zeros(&[batch, units]);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let rows: Vec<usize> = (0..batch).map(|b| b * steps + t).collect();
            let r = sigmoid(&add(&gather_rows(&xr, &rows)?, &linear(&h, w("w_hr")?, Some(w("b_hr")?))?)?);
            let u = sigmoid(&add(&gather_rows(&xu, &rows)?, &linear(&h, w("w_hz")?, Some(w("b_hz")?))?)?);
            let rh = mul(&r, &h)?;
            let n = tanh(&add(&gather_rows(&xn, &rows)?, &linear(&rh, w("w_hn")?, Some(w("b_hn")?))?)?);
            h = add(&n, &mul(&u, &sub(&h, &n)?)?)?;
            outs.push(h.clone());
        }
        // time-major [T'·B, H] back to batch-major [B·T', H]
        let stacked = concat_rows(&outs)?;
        let order: Vec<usize> = (0..batch)
            .flat_map(|b| (0..steps).map(move |t| t * batch + b))
            .collect();
        input = gather_rows(&stacked, &order)?;
    }
    reshape(&input, &[batch, steps, units])
}

impl ModelParams {
    /// Latents for a window batch `[B, 3, T]`.
    pub fn encode(&self, bound: &Bound, x: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let c = &self.config;
        match c.encoder {
            EncoderVariant::Enhanced => encoder_enhanced(bound, x, c.dropout, training, rng),
            EncoderVariant::Original => encoder_original(bound, x, c.original_kernel_size, c.dropout, training, rng),
        }
    }

    /// Context vectors for a latent sequence `[B, T', z_dim]`.
    pub fn aggregate(&self, bound: &Bound, z: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let c = &self.config;
        match c.aggregator {
            AggregatorVariant::CausalConv => aggregator_causal_conv(bound, z, c.causal_blocks),
            AggregatorVariant::Gru => aggregator_gru(bound, z, c.gru_layers, c.gru_units, c.dropout, training, rng),
        }
    }

    /// Encoder then aggregator: `(z, c)`.
    pub fn forward(&self, bound: &Bound, x: &Tensor, training: bool, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        let z = self.encode(bound, x, training, rng)?;
        let c = self.aggregate(bound, &z, training, rng)?;
        Ok((z, c))
    }

    /// Frozen-backbone features: the context vector at the last time step of
    /// every window, computed in eval mode without a graph. `[B, context_dim]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let bound = self.params.bind(false);
        let mut rng = Rng::new(0);
        let (_, c) = self.forward(&bound, x, false, &mut rng)?;
        let (b, t, d) = (c.shape()[0], c.shape()[1], c.shape()[2]);
        let rows: Vec<usize> = (0..b).map(|i| i * t + t - 1).collect();
        gather_rows(&reshape(&c, &[b * t, d])?, &rows)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }
}
