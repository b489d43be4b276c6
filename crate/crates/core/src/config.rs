//! Declarative run configuration, loaded from JSON.
//!
//! Every field except the data source has a default. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CsvSchema;
use crate::models::{ArchitectureConfig, ModelKind};
use crate::preprocess::{DEFAULT_HORIZON, DEFAULT_TRAIN_FRACTION, DEFAULT_WINDOW};
use crate::training::TrainConfig;

/// Features fed to the models when the config does not list any.
pub const DEFAULT_MODEL_FEATURES: [&str; 11] = [
    "demand",
    "rrp",
    "solar_exposure",
    "max_temp",
    "min_temp",
    "rainfall",
    "holiday",
    "school_day",
    "month_sin",
    "month_cos",
    "weekend",
];

pub const DEFAULT_SYNTH_DAYS: usize = 2106;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pricecast-out")
}

/// Exactly one of `csv_path` and `synth` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSource>,
    #[serde(default)]
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    #[serde(default = "default_synth_days")]
    pub n_days: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_synth_days() -> usize {
    DEFAULT_SYNTH_DAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub window: usize,
    pub horizon: usize,
    pub train_fraction: f64,
    pub spike_quantile: f64,
    pub target: String,
    pub features: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            horizon: DEFAULT_HORIZON,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            spike_quantile: 0.9,
            target: "rrp".into(),
            features: DEFAULT_MODEL_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(flatten)]
    pub architecture: ArchitectureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputResolution {
    Daily,
    Monthly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Calendar months covered, counting the month of the first forecast
    /// day as the first.
    pub months: u32,
    pub resolution: OutputResolution,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            months: 72,
            resolution: OutputResolution::Monthly,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// A config over the default synthetic dataset.
    pub fn synthetic(n_days: usize, seed: u64) -> Self {
        Self {
            data: DataConfig {
                csv_path: None,
                synth: Some(SynthSource { n_days, seed }),
                schema: CsvSchema::default(),
            },
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            forecast: ForecastConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(csv) = &cfg.data.csv_path {
            if csv.is_relative() {
                cfg.data.csv_path = Some(base.join(csv));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        match (&self.data.csv_path, &self.data.synth) {
            (Some(_), Some(_)) => return bad("data: set either csv_path or synth, not both"),
            (None, None) => return bad("data: one of csv_path or synth is required"),
            (None, Some(s)) if s.n_days == 0 => return bad("data.synth.n_days must be ≥ 1"),
            _ => {}
        }
        let p = &self.preprocess;
        if p.window == 0 || p.horizon == 0 {
            return bad("preprocess.window and preprocess.horizon must be ≥ 1");
        }
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return bad("preprocess.train_fraction must lie in (0, 1)");
        }
        if !(p.spike_quantile > 0.0 && p.spike_quantile < 1.0) {
            return bad("preprocess.spike_quantile must lie in (0, 1)");
        }
        if !p.features.contains(&p.target) {
            return bad("preprocess.features must include the target");
        }
        if self.forecast.months == 0 {
            return bad("forecast.months must be ≥ 1");
        }
        self.training.validate().map_err(|e| ConfigError(e.to_string()))
    }

    /// The data seed for synthetic sources, `None` for CSV input.
    pub fn data_seed(&self) -> Option<u64> {
        self.data.synth.map(|s| s.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"data": {"synth": {"seed": 3}}}"#).unwrap();
        assert_eq!(cfg.data.synth, Some(SynthSource { n_days: 2106, seed: 3 }));
        assert_eq!(cfg.preprocess.window, 30);
        assert_eq!(cfg.model.kind, ModelKind::Hybrid);
        assert_eq!(cfg.model.architecture.lstm_hidden, 64);
        assert_eq!(cfg.training.epochs, 100);
        assert_eq!(cfg.forecast.months, 72);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn architecture_fields_sit_beside_kind() {
        let cfg =
            RunConfig::from_json(r#"{"data": {"synth": {}}, "model": {"kind": "ann", "ann_hidden": [8, 4]}}"#).unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Ann);
        assert_eq!(cfg.model.architecture.ann_hidden, vec![8, 4]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{}"#,
            r#"{"data": {}}"#,
            r#"{"data": {"csv_path": "a.csv", "synth": {}}}"#,
            r#"{"data": {"synth": {}}, "preprocess": {"window": 0}}"#,
            r#"{"data": {"synth": {}}, "preprocess": {"train_fraction": 1.0}}"#,
            r#"{"data": {"synth": {}}, "preprocess": {"features": ["demand"]}}"#,
            r#"{"data": {"synth": {}}, "training": {"batch_size": 0}}"#,
            r#"{"data": {"synth": {}}, "bogus": 1}"#,
        ] {
            assert!(RunConfig::from_json(text).is_err(), "{text}");
        }
    }
}
