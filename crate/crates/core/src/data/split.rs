use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::window::WindowedDataset;
use crate::engine::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Sorted, deduplicated copy so that callers' ordering never leaks into
/// the split.
fn canonical(subjects: &[String]) -> Vec<String> {
    let mut s = subjects.to_vec();
    s.sort();
    s.dedup();
    s
}

/// `k` user-disjoint folds. Subjects are shuffled once and cut into `k`
/// test groups whose sizes differ by at most one; the remaining subjects of
/// each fold are reshuffled and split 80:20, the train share rounded down.
pub fn make_folds(subjects: &[String], k: usize, rng: &mut Rng) -> Result<FoldPlan> {
    let mut order = canonical(subjects);
    if k < 2 || order.len() < k {
        return Err(Error::Fold(format!(
            "{} subjects cannot form {k} user-disjoint folds",
            order.len()
        )));
    }
    rng.shuffle(&mut order);
    let n = order.len();
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let test: Vec<String> = order[start..start + size].to_vec();
        let mut rest: Vec<String> = order[..start].iter().chain(&order[start + size..]).cloned().collect();
        start += size;
        let mut fold_rng = rng.fork();
        fold_rng.shuffle(&mut rest);
        let train_n = ((4 * rest.len()) / 5).min(rest.len() - 1);
        if train_n == 0 {
            return Err(Error::Fold(format!("fold {f} leaves no training subjects")));
        }
        let val = rest.split_off(train_n);
        folds.push(Fold {
            train: rest,
            val,
            test,
        });
    }
    Ok(FoldPlan { folds })
}

/// 90:10 user-level split for pretraining; validation keeps at least one
/// subject.
pub fn pretrain_split(subjects: &[String], rng: &mut Rng) -> Result<(Vec<String>, Vec<String>)> {
    let mut order = canonical(subjects);
    if order.len() < 2 {
        return Err(Error::Split(format!("need at least 2 subjects, got {}", order.len())));
    }
    rng.shuffle(&mut order);
    let train_n = ((9 * order.len()) / 10).min(order.len() - 1);
    let val = order.split_off(train_n);
    Ok((order, val))
}

/// Keeps `min(per_class, available)` windows of every class, drawn uniformly
/// without replacement; the survivors stay in their original order.
pub fn sample_limited_labels(train: &WindowedDataset, per_class: usize, rng: &mut Rng) -> Result<WindowedDataset> {
    if per_class == 0 {
        return Err(Error::Data("per_class must be at least 1".into()));
    }
    let labels = train.labels()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut keep = Vec::new();
    for idx in by_class.values() {
        let take = per_class.min(idx.len());
        keep.extend(rng.sample_indices(idx.len(), take).into_iter().map(|j| idx[j]));
    }
    keep.sort_unstable();
    Ok(train.subset(&keep))
}

/// Uniform sample of `round(fraction·N)` windows (at least one), original
/// order kept.
pub fn subsample_fraction(ds: &WindowedDataset, fraction: f64, rng: &mut Rng) -> Result<WindowedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Data(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let n = ds.len();
    let take = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let mut keep = rng.sample_indices(n, take);
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn ten_subjects() {
        let plan = make_folds(&ids(10), 5, &mut Rng::new(3)).unwrap();
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (6, 2, 2));
        }
        let mut all: Vec<_> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort();
        assert_eq!(all, ids(10));
        assert_eq!(plan, make_folds(&ids(10), 5, &mut Rng::new(3)).unwrap());
        assert!(matches!(make_folds(&ids(4), 5, &mut Rng::new(3)), Err(Error::Fold(_))));
    }

    #[test]
    fn pretrain_ratios() {
        let (t, v) = pretrain_split(&ids(20), &mut Rng::new(1)).unwrap();
        assert_eq!((t.len(), v.len()), (18, 2));
        let (t, v) = pretrain_split(&ids(2), &mut Rng::new(1)).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
        assert!(pretrain_split(&ids(1), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn limited_labels_counts() {
        let mut ds = WindowedDataset::empty(1, 50.0, true);
        // class 0: 3 windows, class 1: 6 windows
        let labels = vec![0, 1, 1, 0, 1, 1, 0, 1, 1];
        ds.values = vec![0.0; labels.len() * 3];
        ds.subjects = vec!["a".into(); labels.len()];
        ds.labels = Some(labels);
        let out = sample_limited_labels(&ds, 5, &mut Rng::new(0)).unwrap();
        let l = out.labels().unwrap();
        assert_eq!(l.iter().filter(|&&c| c == 0).count(), 3);
        assert_eq!(l.iter().filter(|&&c| c == 1).count(), 5);
        let unlabelled = WindowedDataset::empty(1, 50.0, false);
        assert!(matches!(sample_limited_labels(&unlabelled, 2, &mut Rng::new(0)), Err(Error::Label(_))));
    }
}
