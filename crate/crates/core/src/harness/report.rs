use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::cv::CvOutcome;
use super::pretrain::PretrainEpoch;
use crate::error::{Error, Result};

/// Hex SHA-256 of the JSON serialisation of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex_digest(&json))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct ResultRow<'a> {
    run_id: &'a str,
    fold: usize,
    seed: u64,
    split: &'a str,
    macro_f1: f64,
    epochs_trained: usize,
    best_epoch: usize,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct FinetuneRow {
    seed: u64,
    fold: usize,
    epoch: usize,
    train_loss: f64,
    val_macro_f1: f64,
    lr: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV record per fold × seed with the test macro-F1.
pub fn write_results(path: &Path, run_id: &str, hash: &str, outcome: &CvOutcome) -> Result<()> {
    write_rows(
        path,
        outcome.metrics.records.iter().map(|r| ResultRow {
            run_id,
            fold: r.fold,
            seed: r.seed,
            split: "test",
            macro_f1: r.test_macro_f1,
            epochs_trained: r.epochs_trained,
            best_epoch: r.best_epoch,
            config_hash: hash,
        }),
    )
}

pub fn write_pretrain_curve(path: &Path, curve: &[PretrainEpoch]) -> Result<()> {
    write_rows(path, curve)
}

pub fn write_finetune_curves(path: &Path, outcome: &CvOutcome) -> Result<()> {
    write_rows(
        path,
        outcome.curves.iter().flat_map(|(seed, fold, curve)| {
            curve.iter().map(move |e| FinetuneRow {
                seed: *seed,
                fold: *fold,
                epoch: e.epoch,
                train_loss: e.train_loss,
                val_macro_f1: e.val_macro_f1,
                lr: e.lr,
            })
        }),
    )
}
