use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unweighted mean of per-class F1. Classes that occur neither in the truth
/// nor in the predictions are left out of the mean; a class that occurs but
/// is never hit scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "macro F1 needs equal, non-empty label vectors ({} vs {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for (what, v) in [("true class", t), ("predicted class", p)] {
            if v >= num_classes {
                return Err(Error::Index {
                    what,
                    index: v,
                    limit: num_classes,
                });
            }
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            2.0 * tp[c] as f64 / denom as f64
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Test score of one fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub seed: u64,
    pub val_macro_f1: f64,
    pub test_macro_f1: f64,
    /// Epoch (1-based) whose classifier was kept.
    pub best_epoch: usize,
    pub epochs_trained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Sorted by seed index, then fold.
    pub records: Vec<FoldRecord>,
    /// Mean test macro-F1 over folds, one entry per seed.
    pub seed_means: Vec<f64>,
    /// Mean validation macro-F1 over folds and seeds; the model-selection
    /// score.
    pub val_mean: f64,
    pub mean: f64,
    pub std: f64,
}

impl RunMetrics {
    pub fn from_records(mut records: Vec<FoldRecord>, seeds: &[u64]) -> Self {
        let seed_pos = |s: u64| seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (seed_pos(r.seed), r.fold));
        let seed_means: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let v: Vec<f64> = records.iter().filter(|r| r.seed == s).map(|r| r.test_macro_f1).collect();
                mean_std(&v).0
            })
            .collect();
        let (mean, std) = mean_std(&seed_means);
        let val: Vec<f64> = records.iter().map(|r| r.val_macro_f1).collect();
        RunMetrics {
            records,
            seed_means,
            val_mean: mean_std(&val).0,
            mean,
            std,
        }
    }
}
