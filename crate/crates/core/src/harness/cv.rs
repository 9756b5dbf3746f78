use std::thread;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::finetune::{extract_features, finetune_features, predict, Features, FinetuneEpoch};
use super::metrics::{macro_f1, FoldRecord, RunMetrics};
use crate::data::{FoldPlan, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{Head, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Training and epoch selection.
    Selection,
    /// Scoring the already selected model.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub seed: u64,
    pub fold: usize,
    pub stage: Stage,
    pub role: Role,
}

/// Every read of a fold's data split, in deterministic order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub accesses: Vec<Access>,
}

impl AuditLog {
    /// True when test data was read before the model was fixed.
    pub fn test_seen_during_selection(&self) -> bool {
        self.accesses
            .iter()
            .any(|a| a.stage == Stage::Selection && a.role == Role::Test)
    }
}

/// One fold's windows, handed out only through [`FoldData::read`] so that
/// each access is logged.
struct FoldData<'a> {
    seed: u64,
    fold: usize,
    splits: [Features; 3],
    log: &'a mut Vec<Access>,
}

impl FoldData<'_> {
    fn read(&mut self, stage: Stage, role: Role) -> &Features {
        self.log.push(Access {
            seed: self.seed,
            fold: self.fold,
            stage,
            role,
        });
        &self.splits[role as usize]
    }
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub metrics: RunMetrics,
    pub audit: AuditLog,
    /// `(seed, fold, curve)` in the same order as `metrics.records`.
    pub curves: Vec<(u64, usize, Vec<FinetuneEpoch>)>,
}

/// Options that shape a cross-validation run beyond the optimiser.
#[derive(Clone, Debug)]
pub struct CvSettings {
    pub head: Head,
    pub num_classes: usize,
    pub dropout: f64,
    pub seeds: Vec<u64>,
    /// Threads used for independent (seed, fold) jobs; results do not
    /// depend on it.
    pub workers: usize,
}

struct Job {
    seed: u64,
    fold: usize,
}

struct JobResult {
    record: FoldRecord,
    curve: Vec<FinetuneEpoch>,
    log: Vec<Access>,
}

fn fold_indices(subjects: &[String], plan: &FoldPlan, fold: usize) -> Result<[Vec<usize>; 3]> {
    let f = &plan.folds[fold];
    let pick = |ids: &[String]| -> Vec<usize> { (0..subjects.len()).filter(|&i| ids.contains(&subjects[i])).collect() };
    let out = [pick(&f.train), pick(&f.val), pick(&f.test)];
    for (role, idx) in ["train", "validation", "test"].iter().zip(&out) {
        if idx.is_empty() {
            return Err(Error::Fold(format!("fold {fold} has an empty {role} split")));
        }
    }
    Ok(out)
}

fn run_job(
    job: &Job,
    features: &Features,
    subjects: &[String],
    plan: &FoldPlan,
    settings: &CvSettings,
    config: &TrainConfig,
) -> Result<JobResult> {
    let [tr, va, te] = fold_indices(subjects, plan, job.fold)?;
    let mut log = Vec::new();
    let mut data = FoldData {
        seed: job.seed,
        fold: job.fold,
        splits: [features.subset(&tr), features.subset(&va), features.subset(&te)],
        log: &mut log,
    };
    let cfg = TrainConfig {
        seed: job.seed,
        ..config.clone()
    };
    let train = data.read(Stage::Selection, Role::Train).clone();
    let val = data.read(Stage::Selection, Role::Val).clone();
    let out = finetune_features(settings.head, settings.num_classes, settings.dropout, &train, &val, &cfg)?;
    let test = data.read(Stage::Report, Role::Test);
    let classes = settings.num_classes.max(2);
    let test_f1 = macro_f1(&test.labels, &predict(&out.classifier, test)?, classes)?;
    Ok(JobResult {
        record: FoldRecord {
            fold: job.fold,
            seed: job.seed,
            val_macro_f1: out.best_val_macro_f1,
            test_macro_f1: test_f1,
            best_epoch: out.best_epoch,
            epochs_trained: out.curve.len(),
        },
        curve: out.curve,
        log,
    })
}

/// Fine-tunes and scores a classifier for every (seed, fold) pair on
/// precomputed frozen-backbone features. `subjects[i]` is the subject of
/// feature row `i`.
pub fn cross_validate_features(
    plan: &FoldPlan,
    features: &Features,
    subjects: &[String],
    settings: &CvSettings,
    config: &TrainConfig,
) -> Result<CvOutcome> {
    if settings.seeds.is_empty() {
        return Err(Error::Config("cross-validation needs at least one seed".into()));
    }
    let jobs: Vec<Job> = settings
        .seeds
        .iter()
        .flat_map(|&seed| (0..plan.folds.len()).map(move |fold| Job { seed, fold }))
        .collect();
    let workers = settings.workers.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<Result<JobResult>>> = (0..jobs.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run_job(job, features, subjects, plan, settings, config));
        }
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let jobs = &jobs;
                    s.spawn(move || {
                        (w..jobs.len())
                            .step_by(workers)
                            .map(|j| (j, run_job(&jobs[j], features, subjects, plan, settings, config)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (j, r) in h.join().expect("cross-validation worker panicked") {
                    results[j] = Some(r);
                }
            }
        });
    }
    let mut records = Vec::with_capacity(jobs.len());
    let mut curves = Vec::with_capacity(jobs.len());
    let mut audit = AuditLog::default();
    for r in results {
        let r = r.expect("every job ran")?;
        curves.push((r.record.seed, r.record.fold, r.curve));
        records.push(r.record);
        audit.accesses.extend(r.log);
    }
    let metrics = RunMetrics::from_records(records, &settings.seeds);
    info!("cross-validated macro-F1 {:.4} ± {:.4}", metrics.mean, metrics.std);
    Ok(CvOutcome { metrics, audit, curves })
}

/// [`cross_validate_features`] on the frozen features of `backbone`.
pub fn cross_validate(
    plan: &FoldPlan,
    backbone: &ModelParams,
    ds: &WindowedDataset,
    settings: &CvSettings,
    config: &TrainConfig,
) -> Result<CvOutcome> {
    let features = extract_features(backbone, ds)?;
    cross_validate_features(plan, &features, &ds.subjects, settings, config)
}

/// `count` consecutive classifier seeds starting at `base`.
pub fn classifier_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}
