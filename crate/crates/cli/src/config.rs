//! Run configuration: TOML sections layered over defaults, then `--set`
//! overrides, then validation against the search grids.

use std::path::Path;

use cpc_core::harness::{horizon_grid, SearchSpace, TrainConfig, HORIZON_SINGLE_ANCHOR};
use cpc_core::models::{AggregatorVariant, EncoderVariant, Head, ModelConfig, TaskVariant};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Reject searched hyperparameters that lie outside their grid.
    pub enforce_grid: bool,
    pub data: DataSection,
    pub model: ModelSection,
    pub cpc: CpcSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub synth: SynthSection,
    pub search: SearchSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub window_seconds: f64,
    /// Recordings at a higher rate are decimated to this one.
    pub sample_rate_hz: f64,
    pub pretrain_overlap: f64,
    pub target_overlap: f64,
    pub folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderVariant,
    pub aggregator: AggregatorVariant,
    pub causal_blocks: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub original_kernel_size: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpcSection {
    pub task: TaskVariant,
    pub horizon: usize,
    pub num_negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    /// Clamped to the number of pretraining windows when larger.
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Share of the windows used for pretraining, drawn before the split.
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub head: Head,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of classifier seeds per cross-validation.
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub subjects: usize,
    pub classes: usize,
    pub rate_hz: f64,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    /// Horizon of the single-anchor rows.
    pub single_anchor_horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::enhanced();
        RunConfig {
            seed: 0,
            enforce_grid: true,
            data: DataSection {
                window_seconds: 2.0,
                sample_rate_hz: 50.0,
                pretrain_overlap: 0.0,
                target_overlap: 0.5,
                folds: 5,
            },
            model: ModelSection {
                encoder: m.encoder,
                aggregator: m.aggregator,
                causal_blocks: m.causal_blocks,
                gru_layers: m.gru_layers,
                gru_units: m.gru_units,
                original_kernel_size: m.original_kernel_size,
                dropout: m.dropout,
            },
            cpc: CpcSection {
                task: m.task,
                horizon: m.horizon,
                num_negatives: m.num_negatives,
            },
            pretrain: PretrainSection {
                lr: 1e-3,
                weight_decay: 0.0,
                batch_size: 256,
                epochs: 50,
                patience: 5,
                fraction: 0.1,
            },
            finetune: FinetuneSection {
                head: Head::Linear,
                lr: 5e-4,
                weight_decay: 0.0,
                batch_size: 256,
                epochs: 50,
                seeds: 5,
            },
            synth: SynthSection {
                subjects: 8,
                classes: 3,
                rate_hz: 50.0,
                duration_s: 600.0,
            },
            search: SearchSection { budget: 20 },
            ablate: AblateSection {
                single_anchor_horizon: HORIZON_SINGLE_ANCHOR[0],
            },
        }
    }
}

fn invalid(key: &str, value: impl ToString, allowed: impl Into<String>) -> CliError {
    CliError::Invalid(cpc_core::Error::Validation {
        key: key.to_string(),
        value: value.to_string(),
        allowed: allowed.into(),
    })
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

/// Converts `new` to the type of `old` where that loses nothing.
fn coerce(key: &str, old: &Value, new: Value) -> Result<Value, CliError> {
    let out = match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Integer(_), Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => Value::Integer(f as i64),
        (_, new) => new,
    };
    if std::mem::discriminant(old) != std::mem::discriminant(&out) {
        return Err(invalid(key, &out, type_name(old)));
    }
    Ok(out)
}

/// Replaces the value at dotted `key`; the key must already exist.
pub fn set_key(root: &mut Value, key: &str, new: Value) -> Result<(), CliError> {
    let mut slot = root;
    for part in key.split('.') {
        slot = slot
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| invalid(key, &new, "a known configuration key"))?;
    }
    if slot.is_table() {
        return Err(invalid(key, &new, "a single value, not a section"));
    }
    *slot = coerce(key, slot, new)?;
    Ok(())
}

fn merge(base: &mut Value, layer: Value, prefix: &str) -> Result<(), CliError> {
    let Value::Table(entries) = layer else {
        unreachable!("merge is only called on tables")
    };
    for (k, v) in entries {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(_) => {
                let sub = base
                    .as_table_mut()
                    .and_then(|t| t.get_mut(&k))
                    .filter(|s| s.is_table())
                    .ok_or_else(|| invalid(&key, "[section]", "a known configuration section"))?;
                merge(sub, v, &key)?;
            }
            v => set_key(base, &k, v).map_err(|e| match e {
                CliError::Invalid(cpc_core::Error::Validation { value, allowed, .. }) => invalid(&key, value, allowed),
                e => e,
            })?,
        }
    }
    Ok(())
}

/// Parses `key=value`. The value is read as a TOML literal and falls back to
/// a bare string, so `model.encoder=original` needs no quotes.
pub fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Invalid(cpc_core::Error::Config(format!("override `{raw}` is not of the form key=value"))))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn format_grid(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

impl RunConfig {
    /// Defaults, then the optional file, then overrides in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = Value::try_from(RunConfig::default()).expect("defaults serialise");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(e.into()))?;
            let layer: toml::Table = toml::from_str(&text).map_err(|e| {
                CliError::Invalid(cpc_core::Error::Config(format!("{}: {}", path.display(), e.message())))
            })?;
            merge(&mut root, Value::Table(layer), "")?;
        }
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            set_key(&mut root, &key, value)?;
        }
        let config = Self::from_value(root)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(root: Value) -> Result<Self, CliError> {
        root.try_into()
            .map_err(|e: toml::de::Error| CliError::Invalid(cpc_core::Error::Config(e.message().to_string())))
    }

    pub fn to_value(&self) -> Value {
        Value::try_from(self).expect("config serialises")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Copy with `key` set to `value`, validated.
    pub fn with(&self, key: &str, value: Value) -> Result<Self, CliError> {
        let mut root = self.to_value();
        set_key(&mut root, key, value)?;
        let config = Self::from_value(root)?;
        config.validate()?;
        Ok(config)
    }

    fn number(&self, key: &str) -> Option<f64> {
        let root = self.to_value();
        let mut v = &root;
        for part in key.split('.') {
            v = v.get(part)?;
        }
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.model.encoder,
            aggregator: self.model.aggregator,
            task: self.cpc.task,
            causal_blocks: self.model.causal_blocks,
            gru_layers: self.model.gru_layers,
            gru_units: self.model.gru_units,
            original_kernel_size: self.model.original_kernel_size,
            horizon: self.cpc.horizon,
            num_negatives: self.cpc.num_negatives,
            dropout: self.model.dropout,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.pretrain.lr,
            weight_decay: self.pretrain.weight_decay,
            batch_size: self.pretrain.batch_size,
            epochs: self.pretrain.epochs,
            patience: self.pretrain.patience,
            seed: self.seed,
            pretrain_fraction: self.pretrain.fraction,
        }
    }

    /// The seed is set per classifier run by the cross-validation.
    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.finetune.lr,
            weight_decay: self.finetune.weight_decay,
            batch_size: self.finetune.batch_size,
            epochs: self.finetune.epochs,
            patience: 0,
            seed: self.seed,
            ..TrainConfig::classifier()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let as_invalid = |e: cpc_core::Error| CliError::Invalid(e);
        let model = self.model_config();
        model.validate().map_err(as_invalid)?;
        self.pretrain_config().validate().map_err(as_invalid)?;
        self.finetune_config().validate().map_err(as_invalid)?;
        let d = &self.data;
        for (key, v) in [("data.pretrain_overlap", d.pretrain_overlap), ("data.target_overlap", d.target_overlap)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(key, v, "[0, 1)"));
            }
        }
        for (key, v) in [
            ("data.window_seconds", d.window_seconds),
            ("data.sample_rate_hz", d.sample_rate_hz),
            ("synth.rate_hz", self.synth.rate_hz),
            ("synth.duration_s", self.synth.duration_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, v, "a positive number"));
            }
        }
        if d.folds < 3 {
            return Err(invalid("data.folds", d.folds, "at least 3"));
        }
        for (key, v) in [("finetune.seeds", self.finetune.seeds), ("search.budget", self.search.budget)] {
            if v == 0 {
                return Err(invalid(key, v, "at least 1"));
            }
        }
        if !self.enforce_grid {
            return Ok(());
        }
        for (key, grid) in SearchSpace::for_model(&model).grids {
            let value = self.number(&key).expect("grid keys name numeric config entries");
            if !grid.contains(&value) {
                return Err(invalid(&key, value, format_grid(&grid)));
            }
        }
        let anchor = self.ablate.single_anchor_horizon;
        let grid = horizon_grid(TaskVariant::SingleAnchor);
        if !grid.contains(&anchor) {
            let grid: Vec<f64> = grid.iter().map(|&h| h as f64).collect();
            return Err(invalid("ablate.single_anchor_horizon", anchor, format_grid(&grid)));
        }
        Ok(())
    }
}
