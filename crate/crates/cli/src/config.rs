//! Flat `key=value` run configuration with typed accessors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ulmfit::train::{OptimizerKind, PhaseConfig};

/// Failure attributable to the invocation rather than the run; exits with 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Keys accepted in config files and `--set`.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "preset",
    "max_vocab",
    "min_freq",
    "epochs",
    "epoch_scale",
    "lr",
    "lr_scale",
    "batch_size",
    "bptt_len",
    "max_len",
    "dropout_multiplier",
    "weight_decay",
    "valid_fraction",
    "ar_alpha",
    "tar_beta",
    "clip",
    "pct_start",
    "div_start",
    "div_final",
    "optimizer",
    "fractions",
    "repeats",
    "lm_finetune",
    "parallel",
    "k",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    entries: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut s = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(UsageError(format!("unknown config key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), UsageError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>, UsageError> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| UsageError(format!("invalid value {v:?} for {key}")))
            })
            .transpose()
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V, UsageError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>, UsageError> {
        self.raw(key)
            .map(|v| {
                v.split([',', ';'])
                    .map(|x| {
                        x.trim()
                            .parse()
                            .map_err(|_| UsageError(format!("invalid number {x:?} in {key}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Overlays the training keys onto a phase configuration.
    pub fn apply(&self, cfg: &mut PhaseConfig) -> Result<(), UsageError> {
        if let Some(seed) = self.get("seed")? {
            cfg.seed = seed;
        }
        if let Some(epochs) = self.get::<usize>("epochs")? {
            if cfg.stages.len() != 1 {
                return Err(UsageError(format!(
                    "epochs applies to single-stage phases; {} has {} stages, use epoch_scale",
                    cfg.phase.name(),
                    cfg.stages.len()
                )));
            }
            cfg.stages[0].epochs = epochs;
        }
        if let Some(lr) = self.get::<f64>("lr")? {
            if cfg.stages.len() != 1 {
                return Err(UsageError(format!(
                    "lr applies to single-stage phases; {} has {} stages, use lr_scale",
                    cfg.phase.name(),
                    cfg.stages.len()
                )));
            }
            cfg.stages[0].lr = lr;
        }
        if let Some(scale) = self.get::<usize>("epoch_scale")? {
            cfg.stages.iter_mut().for_each(|s| s.epochs *= scale);
        }
        if let Some(scale) = self.get::<f64>("lr_scale")? {
            cfg.stages.iter_mut().for_each(|s| s.lr *= scale);
        }
        macro_rules! field {
            ($($key:literal => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.get($key)? { cfg.$field = v; })*
            };
        }
        field! {
            "batch_size" => batch_size,
            "bptt_len" => bptt_len,
            "max_len" => max_len,
            "dropout_multiplier" => dropout_multiplier,
            "weight_decay" => weight_decay,
            "valid_fraction" => valid_fraction,
            "ar_alpha" => ar_alpha,
            "tar_beta" => tar_beta,
            "pct_start" => pct_start,
            "div_start" => div_start,
            "div_final" => div_final,
        }
        if let Some(c) = self.get::<f64>("clip")? {
            cfg.clip = (c > 0.0).then_some(c);
        }
        match self.raw("optimizer") {
            None => {}
            Some("adam") => cfg.optimizer = OptimizerKind::Adam,
            Some("sgd") => cfg.optimizer = OptimizerKind::Sgd,
            Some(other) => return Err(UsageError(format!("unknown optimizer {other:?}"))),
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))
    }
}
