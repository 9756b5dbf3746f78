use log::info;
use serde::{Deserialize, Serialize};

use super::config::{lr_at_epoch, Phase, TrainConfig, IMPROVEMENT_EPS};
use crate::cpc::{loss_per_timestep, loss_single_anchor, ContrastiveBatch};
use crate::data::{pretrain_split, subsample_fraction, WindowedDataset};
use crate::engine::{Adam, Bound, Rng, Tensor};
use crate::error::{Error, Result};
use crate::models::{init_params, ModelConfig, ModelParams, TaskVariant};

// Independent RNG streams derived from the run seed.
pub(crate) const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_VAL: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_FRACTION: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Parameters after the best validation epoch.
    pub params: ModelParams,
    pub curve: Vec<PretrainEpoch>,
    /// 1-based epoch the parameters come from.
    pub best_epoch: usize,
}

/// Freshly initialised backbone for `seed`; pretraining starts from exactly
/// these weights.
pub fn init_backbone(model: &ModelConfig, seed: u64) -> Result<ModelParams> {
    init_params(model, &mut Rng::derive(seed, STREAM_INIT))
}

/// Keeps `pretrain_fraction` of all windows, then splits them 90:10 by
/// subject into training and validation sets.
pub fn pretraining_sets(ds: &WindowedDataset, config: &TrainConfig) -> Result<(WindowedDataset, WindowedDataset)> {
    let kept = subsample_fraction(ds, config.pretrain_fraction, &mut Rng::derive(config.seed, STREAM_FRACTION))?;
    let (train_ids, val_ids) = pretrain_split(&kept.subject_ids(), &mut Rng::derive(config.seed, STREAM_SPLIT))?;
    Ok((kept.select_subjects(&train_ids), kept.select_subjects(&val_ids)))
}

pub fn contrastive_loss(
    params: &ModelParams,
    bound: &Bound,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (z, c) = params.forward(bound, x, training, rng)?;
    let cfg = &params.config;
    let batch = ContrastiveBatch::new(z, c, cfg.horizon, cfg.num_negatives)?;
    match cfg.task {
        TaskVariant::PerTimestep => loss_per_timestep(&batch, bound, rng),
        TaskVariant::SingleAnchor => loss_single_anchor(&batch, bound, rng),
    }
}

/// Mean contrastive loss over `ds` in eval mode. Windows are taken in order
/// in chunks of `batch_size`; a final chunk of one window is skipped.
pub fn evaluate_loss(params: &ModelParams, ds: &WindowedDataset, batch_size: usize, rng: &mut Rng) -> Result<f64> {
    let bound = params.params.bind(false);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in idx.chunks(batch_size).filter(|c| c.len() >= 2) {
        let loss = contrastive_loss(params, &bound, &ds.batch(chunk)?, false, rng)?;
        total += loss.item() * chunk.len() as f64;
        count += chunk.len();
    }
    if count == 0 {
        return Err(Error::Data("validation set needs at least 2 windows".into()));
    }
    Ok(total / count as f64)
}

/// Contrastive pretraining from `init` with Adam at a constant learning
/// rate. Stops after `patience` epochs without strict improvement of the
/// validation loss and returns the best epoch's parameters.
pub fn pretrain_from(
    init: ModelParams,
    config: &TrainConfig,
    train: &WindowedDataset,
    val: &WindowedDataset,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if train.len() < config.batch_size {
        return Err(Error::Data(format!(
            "pretraining set has {} windows, fewer than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    let mut params = init;
    let mut adam = Adam::new(config.lr, config.weight_decay);
    let mut shuffle_rng = Rng::derive(config.seed, STREAM_SHUFFLE);
    let mut train_rng = Rng::derive(config.seed, STREAM_TRAIN);
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut since_best = 0;
    let mut curve = Vec::new();
    for epoch in 0..config.epochs {
        adam.lr = lr_at_epoch(config.lr, epoch, Phase::Pretrain);
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let bound = params.params.bind(true);
            let loss = contrastive_loss(&params, &bound, &train.batch(chunk)?, true, &mut train_rng)?;
            total += loss.item();
            batches += 1;
            loss.backward()?;
            adam.step(&mut params.params, &bound.grads())?;
        }
        let val_loss = evaluate_loss(&params, val, config.batch_size, &mut Rng::derive(config.seed, STREAM_VAL))?;
        let record = PretrainEpoch {
            epoch: epoch + 1,
            train_loss: total / batches as f64,
            val_loss,
            lr: adam.lr,
        };
        info!(
            "pretrain epoch {:>2}: train {:.4} val {:.4}",
            record.epoch, record.train_loss, record.val_loss
        );
        curve.push(record);
        if val_loss < best.0 - IMPROVEMENT_EPS {
            best = (val_loss, params.clone(), epoch + 1);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                info!("early stop after epoch {}", epoch + 1);
                break;
            }
        }
    }
    Ok(PretrainOutcome {
        params: best.1,
        curve,
        best_epoch: best.2,
    })
}

/// [`pretrain_from`] starting at [`init_backbone`].
pub fn pretrain(
    config: &TrainConfig,
    model: &ModelConfig,
    train: &WindowedDataset,
    val: &WindowedDataset,
) -> Result<PretrainOutcome> {
    pretrain_from(init_backbone(model, config.seed)?, config, train, val)
}
