//! Flat `section.key = value` configuration.
//!
//! Files are TOML restricted to dotted keys with scalar or array values;
//! `--set key=value` overrides use the same value syntax, and a bare word is
//! read as a string. Every accepted key is listed in [`KEYS`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use tactis_core::backtest::BacktestPlan;
use tactis_core::copula::CopulaConfig;
use tactis_core::encoder::{EncoderConfig, EncoderVariant};
use tactis_core::flow::FlowConfig;
use tactis_core::model::ModelConfig;
use tactis_core::train::TrainConfig;

use crate::error::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const KEYS: &[Key] = &[
    key(
        "seed",
        "0",
        "root seed; data, permutations and sampling use named sub-streams of it",
    ),
    key(
        "generate.process",
        "\"gaussian\"",
        "synthetic process: gaussian | stochvol",
    ),
    key("generate.length", "1000", "time steps to generate"),
    key("generate.num_series", "2", "series of the gaussian process"),
    key(
        "generate.correlation",
        "0.8",
        "pairwise correlation of the gaussian process",
    ),
    key("generate.sv_mu", "-9.0", "stochastic volatility: mean log variance"),
    key("generate.sv_phi", "0.99", "stochastic volatility: persistence"),
    key("generate.sv_sigma", "0.04", "stochastic volatility: log-variance noise"),
    key("encoder.embed_dim", "16", "token embedding width"),
    key("encoder.heads", "2", "attention heads per encoder layer"),
    key("encoder.layer_pairs", "1", "attention + feed-forward layer pairs"),
    key("encoder.ff_dim", "16", "feed-forward hidden width"),
    key("encoder.series_embed_dim", "5", "width of the learned series embedding"),
    key("encoder.variant", "\"standard\"", "standard | temporal"),
    key("encoder.dropout", "0.0", "dropout rate during training"),
    key("flow.layers", "2", "sigmoidal flow layers"),
    key("flow.hidden_dim", "16", "sigmoids per flow layer"),
    key("copula.bins", "20", "histogram bins of each conditional"),
    key("copula.layers", "1", "attention layers of the copula"),
    key("copula.heads", "2", "attention heads of the copula"),
    key("copula.attention_dim", "16", "key/value width of the copula"),
    key("copula.mlp_layers", "1", "hidden layers of the copula networks"),
    key("copula.mlp_dim", "16", "hidden width of the copula networks"),
    key(
        "train.window",
        "\"forecast\"",
        "training windows: forecast | interpolation (50 + 25 gap + 50)",
    ),
    key("train.prediction_length", "1", "forecast horizon in steps"),
    key(
        "train.ratio",
        "2",
        "history length as a multiple of the prediction length",
    ),
    key("train.lr", "0.001", "RMSprop learning rate"),
    key("train.weight_decay", "0.00001", "L2 penalty"),
    key("train.grad_clip", "1000.0", "global gradient-norm clip"),
    key(
        "train.bag_size",
        "20",
        "series per training window (the default shrinks to the series count)",
    ),
    key("train.batch_size", "16", "windows per step"),
    key(
        "train.samples_per_epoch",
        "1600",
        "windows per epoch before bagging compensation",
    ),
    key(
        "train.max_epochs",
        "50",
        "epoch limit; the fixed budget inside backtests",
    ),
    key(
        "train.patience",
        "10",
        "epochs without validation improvement before stopping (the default shrinks to max_epochs)",
    ),
    key(
        "train.validation_fraction",
        "0.1",
        "trailing share of the data held out; 0 disables",
    ),
    key("sample.num_samples", "100", "trajectories per forecast"),
    key(
        "sample.origin",
        "-1",
        "first forecast step; -1 forecasts the last prediction_length steps",
    ),
    key("diagnose.num_samples", "1000", "copula draws per variable"),
    key("backtest.retrain_times", "[]", "strictly increasing retraining steps"),
    key(
        "backtest.forecast_offsets",
        "[0]",
        "forecast origins relative to each retraining step",
    ),
    key(
        "backtest.prediction_length",
        "1",
        "forecast horizon of every backtest cell",
    ),
    key(
        "backtest.trials",
        "1",
        "independently seeded models per retraining step",
    ),
    key(
        "interp.tasks",
        "100",
        "gap tasks tiled from the start of the held-out data",
    ),
    key("interp.num_samples", "100", "samples per gap task"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (default in brackets):\n");
    for k in KEYS {
        let _ = writeln!(s, "  {:width$}  {} [{}]", k.name, k.help, k.default);
    }
    s
}

fn valid_keys() -> String {
    KEYS.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, toml::Value>,
    /// Keys set by a file or override rather than left at their default.
    explicit: BTreeSet<&'static str>,
}

impl Default for Config {
    fn default() -> Self {
        let values = KEYS.iter().map(|k| (k.name, parse_value(k.default))).collect();
        Config {
            values,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let name = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&name, t, out),
            v => out.push((name, v)),
        }
    }
}

impl Config {
    pub fn set(&mut self, name: &str, value: toml::Value) -> Result<(), CliError> {
        let k = KEYS
            .iter()
            .find(|k| k.name == name)
            .ok_or_else(|| CliError::Config(format!("unknown key `{name}`; valid keys: {}", valid_keys())))?;
        let default = &self.values[k.name];
        let same_kind = matches!(
            (default, &value),
            (toml::Value::Integer(_), toml::Value::Integer(_))
                | (toml::Value::Float(_), toml::Value::Float(_) | toml::Value::Integer(_))
                | (toml::Value::String(_), toml::Value::String(_))
                | (toml::Value::Array(_), toml::Value::Array(_))
        );
        if !same_kind {
            return Err(CliError::Config(format!(
                "`{name}` expects a value like {}, got {value}",
                k.default
            )));
        }
        self.values.insert(k.name, value);
        self.explicit.insert(k.name);
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set_str(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), parse_value(v))
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<(), CliError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("line {}: ", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_default();
            CliError::Config(format!("{at}{}", e.message()))
        })?;
        let mut pairs = Vec::new();
        flatten("", table, &mut pairs);
        for (k, v) in pairs {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Config::default();
        c.apply_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(c)
    }

    pub fn is_explicit(&self, name: &str) -> bool {
        self.explicit.contains(name)
    }

    fn raw(&self, name: &str) -> &toml::Value {
        &self.values[name]
    }

    pub fn float(&self, name: &str) -> f64 {
        match self.raw(name) {
            toml::Value::Float(f) => *f,
            toml::Value::Integer(i) => *i as f64,
            v => unreachable!("`{name}` holds {v} despite the type check"),
        }
    }

    pub fn int(&self, name: &str) -> i64 {
        self.raw(name).as_integer().expect("type checked on set")
    }

    pub fn usize(&self, name: &str) -> Result<usize, CliError> {
        usize::try_from(self.int(name)).map_err(|_| CliError::Config(format!("`{name}` must be non-negative")))
    }

    pub fn string(&self, name: &str) -> &str {
        self.raw(name).as_str().expect("type checked on set")
    }

    pub fn usize_list(&self, name: &str) -> Result<Vec<usize>, CliError> {
        self.raw(name)
            .as_array()
            .expect("type checked on set")
            .iter()
            .map(|v| {
                v.as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| CliError::Config(format!("`{name}` must list non-negative integers, found {v}")))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        u64::try_from(self.int("seed")).map_err(|_| CliError::Config("`seed` must be non-negative".into()))
    }

    pub fn model(&self, num_series: usize, cov_dim: usize) -> Result<ModelConfig, CliError> {
        let variant = match self.string("encoder.variant") {
            "standard" => EncoderVariant::Standard,
            "temporal" => EncoderVariant::Temporal,
            v => {
                return Err(CliError::Config(format!(
                    "encoder.variant must be standard or temporal, got `{v}`"
                )))
            }
        };
        Ok(ModelConfig {
            encoder: EncoderConfig {
                embed_dim: self.usize("encoder.embed_dim")?,
                heads: self.usize("encoder.heads")?,
                layer_pairs: self.usize("encoder.layer_pairs")?,
                ff_dim: self.usize("encoder.ff_dim")?,
                series_embed_dim: self.usize("encoder.series_embed_dim")?,
                variant,
                dropout: self.float("encoder.dropout"),
            },
            flow: FlowConfig {
                layers: self.usize("flow.layers")?,
                hidden: self.usize("flow.hidden_dim")?,
            },
            copula: CopulaConfig {
                bins: self.usize("copula.bins")?,
                layers: self.usize("copula.layers")?,
                heads: self.usize("copula.heads")?,
                attention_dim: self.usize("copula.attention_dim")?,
                mlp_layers: self.usize("copula.mlp_layers")?,
                mlp_dim: self.usize("copula.mlp_dim")?,
            },
            num_series,
            cov_dim,
        })
    }

    /// Training settings; the bag size is capped at `num_series`.
    /// Defaulted `train.bag_size` and `train.patience` shrink to fit the
    /// data and the epoch budget; explicit values are validated as given.
    pub fn train(&self, num_series: usize) -> Result<TrainConfig, CliError> {
        let max_epochs = self.usize("train.max_epochs")?;
        let fit = |name: &str, limit: usize| -> Result<usize, CliError> {
            let v = self.usize(name)?;
            Ok(if self.is_explicit(name) { v } else { v.min(limit) })
        };
        Ok(TrainConfig {
            learning_rate: self.float("train.lr"),
            weight_decay: self.float("train.weight_decay"),
            grad_clip: self.float("train.grad_clip"),
            bag_size: fit("train.bag_size", num_series)?,
            batch_size: self.usize("train.batch_size")?,
            samples_per_epoch: self.usize("train.samples_per_epoch")?,
            max_epochs,
            patience: fit("train.patience", max_epochs)?,
            ratio: self.usize("train.ratio")?,
            seed: self.seed()?,
            validation_fraction: self.float("train.validation_fraction"),
        })
    }

    pub fn backtest_plan(&self) -> Result<BacktestPlan, CliError> {
        Ok(BacktestPlan {
            retrain_times: self.usize_list("backtest.retrain_times")?,
            forecast_offsets: self.usize_list("backtest.forecast_offsets")?,
            prediction_length: self.usize("backtest.prediction_length")?,
            trials: self.usize("backtest.trials")?,
        })
    }
}
