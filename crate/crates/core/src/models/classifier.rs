use serde::{Deserialize, Serialize};

use crate::engine::{batch_norm, dropout, linear, relu, Bound, ParamSet, Rng, RunningStats, Tensor};
use crate::error::{Error, Result};

pub const MLP_HIDDEN: [usize; 2] = [256, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Mlp,
}

/// Classifier trained on top of frozen backbone features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub head: Head,
    pub in_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub params: ParamSet,
    pub bn: Vec<RunningStats>,
}

impl ClassifierParams {
    pub fn init(head: Head, in_dim: usize, num_classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {num_classes}")));
        }
        let mut params = ParamSet::default();
        let mut bn = Vec::new();
        match head {
            Head::Linear => {
                params.insert_kaiming("cls.fc1.w", vec![num_classes, in_dim], in_dim, rng)?;
                params.insert_const("cls.fc1.b", vec![num_classes], 0.0)?;
            }
            Head::Mlp => {
                let dims = [in_dim, MLP_HIDDEN[0], MLP_HIDDEN[1], num_classes];
                for i in 0..3 {
                    params.insert_kaiming(&format!("cls.fc{}.w", i + 1), vec![dims[i + 1], dims[i]], dims[i], rng)?;
                    params.insert_const(&format!("cls.fc{}.b", i + 1), vec![dims[i + 1]], 0.0)?;
                }
                for (i, &d) in MLP_HIDDEN.iter().enumerate() {
                    params.insert_const(&format!("cls.bn{}.gamma", i + 1), vec![d], 1.0)?;
                    params.insert_const(&format!("cls.bn{}.beta", i + 1), vec![d], 0.0)?;
                    bn.push(RunningStats::new(d));
                }
            }
        }
        Ok(ClassifierParams {
            head,
            in_dim,
            num_classes,
            dropout,
            params,
            bn,
        })
    }

    /// Logits `[B, num_classes]`. Batch-norm running statistics are updated
    /// when `training` is set.
    pub fn forward(&mut self, bound: &Bound, feature: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        if feature.rank() != 2 || feature.shape()[1] != self.in_dim {
            return Err(Error::Shape(format!(
                "classifier expects [B, {}], got {:?}",
                self.in_dim,
                feature.shape()
            )));
        }
        match self.head {
            Head::Linear => linear(feature, bound.get("cls.fc1.w")?, Some(bound.get("cls.fc1.b")?)),
            Head::Mlp => {
                let mut h = feature.clone();
                for i in 0..2 {
                    h = linear(
                        &h,
                        bound.get(&format!("cls.fc{}.w", i + 1))?,
                        Some(bound.get(&format!("cls.fc{}.b", i + 1))?),
                    )?;
                    h = batch_norm(
                        &h,
                        bound.get(&format!("cls.bn{}.gamma", i + 1))?,
                        bound.get(&format!("cls.bn{}.beta", i + 1))?,
                        &mut self.bn[i],
                        training,
                    )?;
                    h = dropout(&relu(&h), self.dropout, training, rng)?;
                }
                linear(&h, bound.get("cls.fc3.w")?, Some(bound.get("cls.fc3.b")?))
            }
        }
    }

    /// Eval-mode class predictions (argmax, lowest index on ties).
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let mut this = self.clone();
        let bound = self.params.bind(false);
        let logits = this.forward(&bound, features, false, &mut Rng::new(0))?;
        Ok(logits
            .data()
            .chunks_exact(self.num_classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}
