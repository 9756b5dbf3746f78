use log::debug;
use serde::{Deserialize, Serialize};

use super::config::{lr_at_epoch, Phase, TrainConfig};
use super::metrics::macro_f1;
use crate::data::WindowedDataset;
use crate::engine::{softmax_cross_entropy, Adam, Rng, Tensor};
use crate::error::{Error, Result};
use crate::models::{ClassifierParams, Head, ModelParams};

const STREAM_CLS_INIT: u64 = 10;
const STREAM_CLS_SHUFFLE: u64 = 11;
const STREAM_CLS_DROPOUT: u64 = 12;

/// Windows fed through the frozen backbone are processed this many at a
/// time.
pub const FEATURE_CHUNK: usize = 256;

/// Row-major `[N, dim]` feature matrix with the window labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Features {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(&self.values[i * self.dim..(i + 1) * self.dim]);
        }
        Features {
            dim: self.dim,
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.subset(indices);
        Tensor::new(&[indices.len(), self.dim], s.values)
    }

    fn all(&self) -> Result<Tensor> {
        Tensor::new(&[self.len(), self.dim], self.values.clone())
    }
}

/// Last-step context vectors of every window in eval mode. The backbone is
/// only read.
pub fn extract_features(backbone: &ModelParams, ds: &WindowedDataset) -> Result<Features> {
    let labels = ds.labels()?.to_vec();
    let dim = backbone.config.context_dim();
    let mut values = Vec::with_capacity(ds.len() * dim);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(FEATURE_CHUNK) {
        values.extend_from_slice(backbone.features(&ds.batch(chunk)?)?.data());
    }
    Ok(Features { dim, values, labels })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub classifier: ClassifierParams,
    pub curve: Vec<FinetuneEpoch>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

pub fn predict(classifier: &ClassifierParams, features: &Features) -> Result<Vec<usize>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    classifier.predict(&features.all()?)
}

/// Trains a classifier head on precomputed features for `config.epochs`
/// epochs with the decayed learning rate and keeps the epoch with the best
/// validation macro-F1 (earliest on ties).
pub fn finetune_features(
    head: Head,
    num_classes: usize,
    dropout: f64,
    train: &Features,
    val: &Features,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data(format!(
            "fine-tuning needs at least 2 training and 1 validation window, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    // a single-class problem still gets a two-way head
    let classes = num_classes.max(2);
    let mut cls = ClassifierParams::init(head, train.dim, classes, dropout, &mut Rng::derive(config.seed, STREAM_CLS_INIT))?;
    let mut adam = Adam::new(config.lr, config.weight_decay);
    let mut shuffle_rng = Rng::derive(config.seed, STREAM_CLS_SHUFFLE);
    let mut drop_rng = Rng::derive(config.seed, STREAM_CLS_DROPOUT);
    let mut best: Option<(f64, ClassifierParams, usize)> = None;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.lr = lr_at_epoch(config.lr, epoch, Phase::Classify);
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        // batch norm cannot train on a single row
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let bound = cls.params.bind(true);
            let logits = cls.forward(&bound, &train.tensor(chunk)?, true, &mut drop_rng)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = softmax_cross_entropy(&logits, &targets)?;
            total += loss.item();
            batches += 1;
            loss.backward()?;
            adam.step(&mut cls.params, &bound.grads())?;
        }
        let f1 = macro_f1(&val.labels, &predict(&cls, val)?, classes)?;
        debug!("finetune epoch {:>2}: loss {:.4} val F1 {:.4}", epoch + 1, total / batches as f64, f1);
        curve.push(FinetuneEpoch {
            epoch: epoch + 1,
            train_loss: total / batches as f64,
            val_macro_f1: f1,
            lr: adam.lr,
        });
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, cls.clone(), epoch + 1));
        }
    }
    let (best_val_macro_f1, classifier, best_epoch) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        classifier,
        curve,
        best_epoch,
        best_val_macro_f1,
    })
}

/// Fine-tunes a head on the frozen backbone's features of `train`, selecting
/// on `val`.
pub fn finetune(
    backbone: &ModelParams,
    head: Head,
    num_classes: usize,
    train: &WindowedDataset,
    val: &WindowedDataset,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let tr = extract_features(backbone, train)?;
    let va = extract_features(backbone, val)?;
    finetune_features(head, num_classes, backbone.config.dropout, &tr, &va, config)
}
