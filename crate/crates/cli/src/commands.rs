//! One function per subcommand. Each reads its inputs, runs the pipeline
//! stage and writes its artifacts into the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use cpc_core::data::{
    downsample, load_csv, make_folds, synth_generate, window_all, write_csv, zscore_apply, zscore_fit, FoldPlan,
    Recording, WindowedDataset, ZScore,
};
use cpc_core::engine::Rng;
use cpc_core::harness::{
    classifier_seeds, config_hash, cross_validate, finetune, init_backbone, macro_f1, predict, pretrain,
    pretraining_sets, random_search, write_finetune_curves, write_pretrain_curve, write_results, CvOutcome, CvSettings,
    extract_features, PretrainOutcome, SearchSpace, TrainConfig,
};
use cpc_core::models::{AggregatorVariant, EncoderVariant, ModelParams, TaskVariant};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::{RunDir, CONFIG_FILE, MANIFEST_FILE};
use crate::CliError;

// RNG streams derived from the run seed, disjoint from the ones the
// training loops use.
const STREAM_SYNTH: u64 = 100;
const STREAM_FOLDS: u64 = 200;
const STREAM_SEARCH: u64 = 300;

pub const RECORDINGS_FILE: &str = "recordings.csv";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESULTS_FILE: &str = "results.csv";

type Result<T> = std::result::Result<T, CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("plain data serialises");
    fs::write(path, json + "\n").map_err(|e| CliError::Runtime(e.into()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(e.into()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.into()))
}

fn run_id(command: &str, config: &RunConfig) -> Result<String> {
    Ok(format!("{command}-{}", &config_hash(config)?[..12]))
}

/// Recordings from `path`, decimated to the configured rate where needed.
pub fn load_recordings(path: &Path, config: &RunConfig) -> Result<Vec<Recording>> {
    let target = config.data.sample_rate_hz;
    load_csv(path)?
        .into_iter()
        .map(|r| {
            if r.sample_rate_hz == target {
                Ok(r)
            } else {
                info!("{}: resampling {} Hz to {} Hz", r.subject, r.sample_rate_hz, target);
                Ok(downsample(&r, target)?)
            }
        })
        .collect()
}

pub fn synth(config: &RunConfig, dir: &RunDir) -> Result<()> {
    let s = &config.synth;
    let recs = synth_generate(s.subjects, s.classes, s.rate_hz, s.duration_s, &mut Rng::derive(config.seed, STREAM_SYNTH))?;
    write_csv(&recs, &dir.file(RECORDINGS_FILE))?;
    info!("wrote {} subjects × {} s to {}", s.subjects, s.duration_s, dir.file(RECORDINGS_FILE).display());
    dir.finish("synth", config, &[], &[RECORDINGS_FILE, CONFIG_FILE, MANIFEST_FILE])
}

#[derive(Serialize)]
struct PretrainSummary {
    pretrain_windows: usize,
    val_windows: usize,
    batch_size: usize,
    epochs_run: usize,
    best_epoch: usize,
    first_val_loss: f64,
    best_val_loss: f64,
    /// Relative drop of the validation loss from epoch 1 to the best epoch.
    val_loss_drop: f64,
}

/// Pretraining windows, normalisation fitted on the training part, and the
/// trained backbone.
fn pretrain_stage(recs: &[Recording], config: &RunConfig) -> Result<(PretrainOutcome, ZScore, PretrainSummary)> {
    let ds = window_all(recs, config.data.window_seconds, config.data.pretrain_overlap)?;
    let mut tc = config.pretrain_config();
    let (tr, va) = pretraining_sets(&ds, &tc)?;
    let stats = zscore_fit(&tr)?;
    let (tr, va) = (zscore_apply(&tr, &stats), zscore_apply(&va, &stats));
    if tc.batch_size > tr.len() {
        info!("batch size {} limited to the {} pretraining windows", tc.batch_size, tr.len());
        tc.batch_size = tr.len();
    }
    info!("pretraining on {} windows, validating on {}", tr.len(), va.len());
    let out = pretrain(&tc, &config.model_config(), &tr, &va)?;
    let first = out.curve[0].val_loss;
    let best = out.curve[out.best_epoch - 1].val_loss;
    let summary = PretrainSummary {
        pretrain_windows: tr.len(),
        val_windows: va.len(),
        batch_size: tc.batch_size,
        epochs_run: out.curve.len(),
        best_epoch: out.best_epoch,
        first_val_loss: first,
        best_val_loss: best,
        val_loss_drop: (first - best) / first,
    };
    Ok((out, stats, summary))
}

pub fn pretrain_cmd(config: &RunConfig, data: &Path, dir: &RunDir) -> Result<()> {
    let recs = load_recordings(data, config)?;
    let (out, stats, summary) = pretrain_stage(&recs, config)?;
    out.params.save(&dir.file(BACKBONE_FILE))?;
    write_json(&dir.file(NORMALIZATION_FILE), &stats)?;
    write_pretrain_curve(&dir.file("pretrain_curve.csv"), &out.curve)?;
    write_json(&dir.file(METRICS_FILE), &summary)?;
    info!(
        "validation loss {:.4} -> {:.4} ({:.1}% drop)",
        summary.first_val_loss,
        summary.best_val_loss,
        100.0 * summary.val_loss_drop
    );
    dir.finish(
        "pretrain",
        config,
        &[data.to_path_buf()],
        &[BACKBONE_FILE, NORMALIZATION_FILE, "pretrain_curve.csv", METRICS_FILE, CONFIG_FILE, MANIFEST_FILE],
    )
}

/// Normalised target windows and their subject-disjoint fold plan.
fn target_stage(recs: &[Recording], config: &RunConfig, stats: &ZScore) -> Result<(WindowedDataset, FoldPlan)> {
    let ds = window_all(recs, config.data.window_seconds, config.data.target_overlap)?;
    let ds = zscore_apply(&ds, stats);
    let plan = make_folds(&ds.subject_ids(), config.data.folds, &mut Rng::derive(config.seed, STREAM_FOLDS))?;
    Ok((ds, plan))
}

fn cv_settings(config: &RunConfig, target: &WindowedDataset, workers: usize) -> Result<CvSettings> {
    Ok(CvSettings {
        head: config.finetune.head,
        num_classes: target.num_classes()?,
        dropout: config.model.dropout,
        seeds: classifier_seeds(config.seed, config.finetune.seeds),
        workers,
    })
}

fn evaluate_stage(
    backbone: &ModelParams,
    recs: &[Recording],
    stats: &ZScore,
    config: &RunConfig,
    workers: usize,
) -> Result<CvOutcome> {
    let (target, plan) = target_stage(recs, config, stats)?;
    let settings = cv_settings(config, &target, workers)?;
    Ok(cross_validate(&plan, backbone, &target, &settings, &config.finetune_config())?)
}

fn write_cv(dir: &Path, run_id: &str, hash: &str, out: &CvOutcome) -> Result<()> {
    write_results(&dir.join(RESULTS_FILE), run_id, hash, out)?;
    write_finetune_curves(&dir.join("finetune_curves.csv"), out)?;
    write_json(&dir.join(METRICS_FILE), &out.metrics)
}

/// Backbone and normalisation saved by `pretrain` in `dir`.
fn load_backbone(dir: &Path) -> Result<(ModelParams, ZScore, Vec<PathBuf>)> {
    let ckpt = dir.join(BACKBONE_FILE);
    let norm = dir.join(NORMALIZATION_FILE);
    Ok((ModelParams::load(&ckpt)?, read_json(&norm)?, vec![ckpt, norm]))
}

pub fn evaluate_cmd(config: &RunConfig, data: &Path, backbone_dir: &Path, random_init: bool, workers: usize, dir: &RunDir) -> Result<()> {
    let recs = load_recordings(data, config)?;
    let (mut backbone, stats, mut inputs) = load_backbone(backbone_dir)?;
    if random_init {
        info!("replacing the pretrained weights with a seed-{} initialisation", config.seed);
        backbone = init_backbone(&backbone.config, config.seed)?;
    }
    let out = evaluate_stage(&backbone, &recs, &stats, config, workers)?;
    write_cv(&dir.path, &run_id("evaluate", config)?, &config_hash(config)?, &out)?;
    info!("test macro-F1 {:.4} ± {:.4}", out.metrics.mean, out.metrics.std);
    inputs.insert(0, data.to_path_buf());
    dir.finish(
        "evaluate",
        config,
        &inputs,
        &[RESULTS_FILE, "finetune_curves.csv", METRICS_FILE, CONFIG_FILE, MANIFEST_FILE],
    )
}

#[derive(Serialize)]
struct SingleResult<'a> {
    run_id: &'a str,
    fold: usize,
    seed: u64,
    split: &'a str,
    macro_f1: f64,
    epochs_trained: usize,
    best_epoch: usize,
    config_hash: &'a str,
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Runtime(cpc_core::Error::Format(e.to_string()))
}

/// Trains one classifier on fold 0 with the first classifier seed.
pub fn finetune_cmd(config: &RunConfig, data: &Path, backbone_dir: &Path, dir: &RunDir) -> Result<()> {
    let recs = load_recordings(data, config)?;
    let (backbone, stats, mut inputs) = load_backbone(backbone_dir)?;
    let (target, plan) = target_stage(&recs, config, &stats)?;
    let fold = &plan.folds[0];
    let (tr, va, te) = (
        target.select_subjects(&fold.train),
        target.select_subjects(&fold.val),
        target.select_subjects(&fold.test),
    );
    let settings = cv_settings(config, &target, 1)?;
    let seed = settings.seeds[0];
    let tc = TrainConfig {
        seed,
        ..config.finetune_config()
    };
    let out = finetune(&backbone, settings.head, settings.num_classes, &tr, &va, &tc)?;
    let test = extract_features(&backbone, &te)?;
    let classes = settings.num_classes.max(2);
    let test_f1 = macro_f1(&test.labels, &predict(&out.classifier, &test)?, classes)?;
    info!("fold 0: validation macro-F1 {:.4}, test {:.4}", out.best_val_macro_f1, test_f1);

    out.classifier.save(&dir.file("classifier.ckpt"))?;
    write_csv_rows(&dir.file("finetune_curve.csv"), &out.curve)?;
    let (id, hash) = (run_id("finetune", config)?, config_hash(config)?);
    let row = |split, macro_f1| SingleResult {
        run_id: &id,
        fold: 0,
        seed,
        split,
        macro_f1,
        epochs_trained: out.curve.len(),
        best_epoch: out.best_epoch,
        config_hash: &hash,
    };
    write_csv_rows(&dir.file(RESULTS_FILE), [row("val", out.best_val_macro_f1), row("test", test_f1)])?;
    inputs.insert(0, data.to_path_buf());
    dir.finish(
        "finetune",
        config,
        &inputs,
        &["classifier.ckpt", "finetune_curve.csv", RESULTS_FILE, CONFIG_FILE, MANIFEST_FILE],
    )
}

/// Component combinations compared by `ablate`, from the baseline to the
/// full method.
pub const ABLATION_ROWS: [(&str, EncoderVariant, AggregatorVariant, TaskVariant); 5] = [
    ("CPC", EncoderVariant::Original, AggregatorVariant::Gru, TaskVariant::SingleAnchor),
    ("CPC + new encoder", EncoderVariant::Enhanced, AggregatorVariant::Gru, TaskVariant::SingleAnchor),
    ("CPC + Conv. Agg", EncoderVariant::Original, AggregatorVariant::CausalConv, TaskVariant::SingleAnchor),
    (
        "CPC + new encoder + Conv. Agg",
        EncoderVariant::Enhanced,
        AggregatorVariant::CausalConv,
        TaskVariant::SingleAnchor,
    ),
    ("Enhanced CPC", EncoderVariant::Enhanced, AggregatorVariant::CausalConv, TaskVariant::PerTimestep),
];

fn variant_name<T: Serialize>(v: T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => unreachable!("variants serialise as strings"),
    }
}

/// The config of ablation row `i`: the base config with the row's
/// components. Single-anchor rows use `ablate.single_anchor_horizon`.
pub fn ablation_config(base: &RunConfig, i: usize) -> Result<RunConfig> {
    let (_, encoder, aggregator, task) = ABLATION_ROWS[i];
    let horizon = match task {
        TaskVariant::SingleAnchor => base.ablate.single_anchor_horizon,
        TaskVariant::PerTimestep => base.cpc.horizon,
    };
    let mut c = base.clone();
    c.model.encoder = encoder;
    c.model.aggregator = aggregator;
    c.cpc.task = task;
    c.cpc.horizon = horizon;
    c.validate()?;
    Ok(c)
}

#[derive(Serialize)]
struct AblationRow {
    row: usize,
    name: &'static str,
    encoder: String,
    aggregator: String,
    task: String,
    horizon: usize,
    /// Allowed horizons for the row's task, space separated.
    horizon_grid: String,
    config_hash: String,
    mean: f64,
    std: f64,
}

pub fn ablate_cmd(config: &RunConfig, data: &Path, workers: usize, dir: &RunDir) -> Result<()> {
    let recs = load_recordings(data, config)?;
    let mut rows = Vec::new();
    for (i, &(name, encoder, aggregator, task)) in ABLATION_ROWS.iter().enumerate() {
        let row_error = |e: CliError| e.context(&format!("ablation row `{name}`"));
        let c = ablation_config(config, i).map_err(row_error)?;
        info!("ablation row {}/{}: {name}", i + 1, ABLATION_ROWS.len());
        let hash = config_hash(&c)?;
        let sub = dir.path.join(format!("row{}", i + 1));
        fs::create_dir_all(&sub).map_err(|e| CliError::Runtime(e.into()))?;
        let (pre, stats, summary) = pretrain_stage(&recs, &c).map_err(row_error)?;
        let out = evaluate_stage(&pre.params, &recs, &stats, &c, workers).map_err(row_error)?;
        write_pretrain_curve(&sub.join("pretrain_curve.csv"), &pre.curve)?;
        write_json(&sub.join("pretrain_metrics.json"), &summary)?;
        write_cv(&sub, &format!("ablate-row{}", i + 1), &hash, &out)?;
        fs::write(sub.join(CONFIG_FILE), c.to_toml()).map_err(|e| CliError::Runtime(e.into()))?;
        let grid: Vec<String> = cpc_core::harness::horizon_grid(task).iter().map(|h| h.to_string()).collect();
        rows.push(AblationRow {
            row: i + 1,
            name,
            encoder: variant_name(encoder),
            aggregator: variant_name(aggregator),
            task: variant_name(task),
            horizon: c.cpc.horizon,
            horizon_grid: grid.join(" "),
            config_hash: hash,
            mean: out.metrics.mean,
            std: out.metrics.std,
        });
        info!("{name}: {:.4} ± {:.4}", out.metrics.mean, out.metrics.std);
    }
    write_csv_rows(&dir.file("ablation.csv"), rows)?;
    let subdirs: Vec<String> = (1..=ABLATION_ROWS.len()).map(|i| format!("row{i}")).collect();
    let mut outputs = vec!["ablation.csv"];
    outputs.extend(subdirs.iter().map(String::as_str));
    outputs.extend([CONFIG_FILE, MANIFEST_FILE]);
    dir.finish("ablate", config, &[data.to_path_buf()], &outputs)
}

/// Applies a search combination to `base`.
pub fn with_combination(base: &RunConfig, combination: &cpc_core::harness::Combination) -> Result<RunConfig> {
    let mut root = base.to_value();
    for (key, &value) in combination {
        crate::config::set_key(&mut root, key, toml::Value::Float(value))?;
    }
    let c = RunConfig::from_value(root)?;
    c.validate()?;
    Ok(c)
}

pub fn search_cmd(config: &RunConfig, data: &Path, workers: usize, dir: &RunDir) -> Result<()> {
    let recs = load_recordings(data, config)?;
    let space = SearchSpace::for_model(&config.model_config());
    let mut outcomes = Vec::new();
    let mut draw = 0;
    let ranked = random_search(
        &space,
        config.search.budget,
        |combination| {
            draw += 1;
            info!("search draw {draw}: {combination:?}");
            let c = with_combination(config, combination).map_err(CliError::into_core)?;
            let (pre, stats, _) = pretrain_stage(&recs, &c).map_err(CliError::into_core)?;
            let out = evaluate_stage(&pre.params, &recs, &stats, &c, workers).map_err(CliError::into_core)?;
            let score = out.metrics.val_mean;
            outcomes.push((c, out));
            Ok(score)
        },
        &mut Rng::derive(config.seed, STREAM_SEARCH),
    )?;

    let keys: Vec<&String> = space.grids.iter().map(|(k, _)| k).collect();
    let mut w = csv::Writer::from_path(dir.file("search.csv")).map_err(csv_error)?;
    let mut header = vec!["rank", "draw", "val_macro_f1", "test_mean", "test_std", "config_hash"];
    header.extend(keys.iter().map(|k| k.as_str()));
    w.write_record(&header).map_err(csv_error)?;
    for r in &ranked {
        let (c, out) = &outcomes[r.draw];
        let mut row = vec![
            r.rank.to_string(),
            r.draw.to_string(),
            r.score.to_string(),
            out.metrics.mean.to_string(),
            out.metrics.std.to_string(),
            config_hash(c)?,
        ];
        row.extend(keys.iter().map(|k| r.combination[*k].to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))?;

    let (best, out) = &outcomes[ranked[0].draw];
    write_cv(&dir.path, &run_id("search", best)?, &config_hash(best)?, out)?;
    fs::write(dir.file("best_config.toml"), best.to_toml()).map_err(|e| CliError::Runtime(e.into()))?;
    info!("best draw {}: test macro-F1 {:.4} ± {:.4}", ranked[0].draw, out.metrics.mean, out.metrics.std);
    dir.finish(
        "search",
        config,
        &[data.to_path_buf()],
        &["search.csv", "best_config.toml", RESULTS_FILE, "finetune_curves.csv", METRICS_FILE, CONFIG_FILE, MANIFEST_FILE],
    )
}
