//! End-to-end runs behind the command-line tool.
//!
//! Every artifact is written atomically: a temp file in the output
//! directory, renamed into place once complete.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, OutputResolution, RunConfig};
use crate::data::{
    add_seasonal_features, forward_fill, load_csv, pearson_correlation, synth_series, CorrelationMatrix, DataError,
    TimeSeriesFrame,
};
use crate::forecast::{aggregate_monthly, recursive_forecast, ForecastError, ForecastResult};
use crate::metrics::{comparison_csv, resolve_spike_threshold, MetricsError, MetricsReport, SpikeRule};
use crate::models::{ModelError, ModelKind};
use crate::nn::{ModelGraph, NnError};
use crate::preprocess::{
    apply_minmax, chrono_split, fit_minmax, make_windows, PreprocessError, ScalerParams, SplitSpec, WindowedDataset,
};
use crate::training::{
    evaluate_model, evaluate_predictions, persistence_predictions, train_model, TrainError, TrainHistory,
};

pub const MODEL_FILE: &str = "model.json";
pub const SCALER_FILE: &str = "scaler.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const FORECAST_CSV: &str = "forecast.csv";
pub const FORECAST_JSON: &str = "forecast.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    /// Whether the failure lies in the invocation or config rather than
    /// the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents` to `path` via a temp file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn read_artifact(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub rows: usize,
    pub columns: Vec<String>,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub sha256: String,
}

impl DatasetFingerprint {
    pub fn of(frame: &TimeSeriesFrame) -> Self {
        Self {
            rows: frame.len(),
            columns: frame.feature_names().to_vec(),
            first_date: frame.dates()[0],
            last_date: frame.last_date(),
            sha256: frame.fingerprint(),
        }
    }
}

/// The dataset exactly as loaded, before any cleaning.
pub fn load_frame(config: &RunConfig) -> Result<TimeSeriesFrame> {
    config.validate()?;
    match (&config.data.csv_path, &config.data.synth) {
        (Some(path), _) => Ok(load_csv(path, &config.data.schema)?),
        (None, Some(s)) => Ok(synth_series(s.n_days, s.seed)),
        (None, None) => unreachable!("validated config has a data source"),
    }
}

/// Forward-filled frame with calendar features added.
pub fn clean_frame(raw: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    Ok(add_seasonal_features(&forward_fill(raw)?)?)
}

/// Everything the models consume, derived from one config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fingerprint: DatasetFingerprint,
    /// Cleaned frame restricted to the model features, in price units.
    pub frame: TimeSeriesFrame,
    pub scaler: ScalerParams,
    /// `frame` under `scaler`, all rows.
    pub scaled: TimeSeriesFrame,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub spike_threshold: f64,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let raw = load_frame(config)?;
    let fingerprint = DatasetFingerprint::of(&raw);
    let p = &config.preprocess;
    let frame = clean_frame(&raw)?.select(&p.features)?;
    let split = SplitSpec {
        train_fraction: p.train_fraction,
    };
    let train_end = split.train_end_index(frame.len());
    let scaler = fit_minmax(&frame, 0..train_end)?;
    let scaled = apply_minmax(&frame, &scaler)?;
    let (train_frame, test_frame) = chrono_split(&scaled, split)?;
    let train = make_windows(&train_frame, p.window, p.horizon, &p.target)?;
    let test = make_windows(&test_frame, p.window, p.horizon, &p.target)?;
    let spike_threshold = resolve_spike_threshold(
        &frame.column(&p.target)?[..train_end],
        SpikeRule {
            quantile: p.spike_quantile,
        },
    )?;
    Ok(Prepared {
        fingerprint,
        frame,
        scaler,
        scaled,
        train,
        test,
        spike_threshold,
    })
}

/// A trained model with its test-set evaluation.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub kind: ModelKind,
    pub model: ModelGraph,
    pub history: TrainHistory,
    pub metrics: MetricsReport,
}

pub fn fit(prepared: &Prepared, config: &RunConfig, kind: ModelKind) -> Result<TrainedRun> {
    let p = &config.preprocess;
    let model = config.model.architecture.build(
        kind,
        p.window,
        prepared.train.n_features(),
        p.horizon,
        config.training.seed,
    )?;
    let (model, history) = train_model(model, &prepared.train, &config.training)?;
    let metrics = evaluate_model(&model, &prepared.test, &prepared.scaler, prepared.spike_threshold)?;
    Ok(TrainedRun {
        kind,
        model,
        history,
        metrics,
    })
}

/// Test-set report for the last-value forecaster.
pub fn persistence_report(prepared: &Prepared) -> Result<MetricsReport> {
    Ok(evaluate_predictions(
        &persistence_predictions(&prepared.test),
        &prepared.test,
        &prepared.scaler,
        prepared.spike_threshold,
    )?)
}

fn without_timings(history: &TrainHistory) -> TrainHistory {
    TrainHistory {
        epoch_seconds: Vec::new(),
        ..history.clone()
    }
}

/// Enough to rerun a training bit-identically and to audit its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub model_kind: ModelKind,
    pub data_seed: Option<u64>,
    pub model_seed: u64,
    pub dataset: DatasetFingerprint,
    pub train_samples: usize,
    pub test_samples: usize,
    pub spike_threshold: f64,
    pub num_params: usize,
    pub history: TrainHistory,
    pub metrics: MetricsReport,
    pub persistence_metrics: MetricsReport,
    pub config: RunConfig,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Trains the configured model and writes model, scaler, metrics and
/// manifest into the output directory.
pub fn train(config: &RunConfig) -> Result<(TrainedRun, Manifest)> {
    let prepared = prepare(config)?;
    let run = fit(&prepared, config, config.model.kind)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model_kind: run.kind,
        data_seed: config.data_seed(),
        model_seed: config.training.seed,
        dataset: prepared.fingerprint.clone(),
        train_samples: prepared.train.len(),
        test_samples: prepared.test.len(),
        spike_threshold: prepared.spike_threshold,
        num_params: run.model.num_params(),
        history: without_timings(&run.history),
        metrics: run.metrics.clone(),
        persistence_metrics: persistence_report(&prepared)?,
        config: config.clone(),
    };
    let out = &config.output_dir;
    write_atomic(&out.join(MODEL_FILE), run.model.to_json().as_bytes())?;
    write_atomic(&out.join(SCALER_FILE), prepared.scaler.to_json().as_bytes())?;
    write_atomic(&out.join(METRICS_FILE), to_json(&run.metrics).as_bytes())?;
    write_atomic(&out.join(MANIFEST_FILE), to_json(&manifest).as_bytes())?;
    Ok((run, manifest))
}

/// Model and scaler previously written by [`train`], checked against the
/// data the config produces now.
fn load_trained(config: &RunConfig, prepared: &Prepared) -> Result<ModelGraph> {
    let model_path = config.output_dir.join(MODEL_FILE);
    let scaler_path = config.output_dir.join(SCALER_FILE);
    let model = ModelGraph::from_json(&read_artifact(&model_path)?).map_err(|e| PipelineError::Artifact {
        path: model_path.clone(),
        message: e.to_string(),
    })?;
    let scaler = ScalerParams::from_json(&read_artifact(&scaler_path)?).map_err(|e| PipelineError::Artifact {
        path: scaler_path.clone(),
        message: e.to_string(),
    })?;
    if scaler != prepared.scaler {
        return Err(PipelineError::Artifact {
            path: scaler_path,
            message: "scaler does not match the configured data; retrain".into(),
        });
    }
    let p = &config.preprocess;
    if model.input_shape() != [p.window, prepared.frame.n_features()] {
        return Err(PipelineError::Artifact {
            path: model_path,
            message: format!(
                "model expects input {:?}, config gives [{}, {}]",
                model.input_shape(),
                p.window,
                prepared.frame.n_features()
            ),
        });
    }
    Ok(model)
}

/// Re-evaluates a trained model on the test partition.
pub fn evaluate(config: &RunConfig) -> Result<MetricsReport> {
    let prepared = prepare(config)?;
    let model = load_trained(config, &prepared)?;
    let report = evaluate_model(&model, &prepared.test, &prepared.scaler, prepared.spike_threshold)?;
    write_atomic(&config.output_dir.join(EVALUATION_FILE), to_json(&report).as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_kind: ModelKind,
    pub label: String,
    pub num_params: usize,
    pub history: TrainHistory,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub data_seed: Option<u64>,
    pub model_seed: u64,
    pub dataset: DatasetFingerprint,
    pub spike_threshold: f64,
    pub rows: Vec<ComparisonRow>,
    pub persistence_metrics: MetricsReport,
    pub config: RunConfig,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let rows: Vec<(String, MetricsReport)> =
            self.rows.iter().map(|r| (r.label.clone(), r.metrics.clone())).collect();
        comparison_csv(&rows)
    }

    pub fn row(&self, kind: ModelKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model_kind == kind)
    }
}

/// Trains all three architectures on one prepared dataset, one thread
/// each, and writes the comparison table.
pub fn compare(config: &RunConfig) -> Result<Comparison> {
    let prepared = prepare(config)?;
    let runs: Vec<Result<TrainedRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ModelKind::ALL
            .iter()
            .map(|&kind| {
                let prepared = &prepared;
                scope.spawn(move || fit(prepared, config, kind))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let rows = runs
        .into_iter()
        .map(|r| {
            r.map(|run| ComparisonRow {
                model_kind: run.kind,
                label: run.kind.label().to_string(),
                num_params: run.model.num_params(),
                history: without_timings(&run.history),
                metrics: run.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let comparison = Comparison {
        data_seed: config.data_seed(),
        model_seed: config.training.seed,
        dataset: prepared.fingerprint.clone(),
        spike_threshold: prepared.spike_threshold,
        rows,
        persistence_metrics: persistence_report(&prepared)?,
        config: config.clone(),
    };
    let out = &config.output_dir;
    write_atomic(&out.join(COMPARISON_CSV), comparison.to_csv().as_bytes())?;
    write_atomic(&out.join(COMPARISON_JSON), to_json(&comparison).as_bytes())?;
    Ok(comparison)
}

/// Days from the day after `last` to the end of the `months`-th calendar
/// month, counting that day's month as the first.
pub fn forecast_steps(last: NaiveDate, months: u32) -> usize {
    let start = last + Duration::days(1);
    let first_of_start = start.with_day(1).expect("day 1 exists");
    let end = first_of_start + Months::new(months) - Duration::days(1);
    (end - start).num_days() as usize + 1
}

/// Forecasts past the end of the data with the trained model and writes
/// the result as CSV and JSON.
pub fn forecast(config: &RunConfig) -> Result<ForecastResult> {
    let prepared = prepare(config)?;
    let model = load_trained(config, &prepared)?;
    let steps = forecast_steps(prepared.scaled.last_date(), config.forecast.months);
    let daily = recursive_forecast(
        &model,
        &prepared.scaled,
        &prepared.scaler,
        config.preprocess.window,
        steps,
        &config.preprocess.target,
    )?;
    let result = match config.forecast.resolution {
        OutputResolution::Daily => daily,
        OutputResolution::Monthly => aggregate_monthly(&daily)?,
    };
    let out = &config.output_dir;
    write_atomic(&out.join(FORECAST_CSV), result.to_csv().as_bytes())?;
    write_atomic(&out.join(FORECAST_JSON), result.to_json().as_bytes())?;
    Ok(result)
}

/// Pearson matrix over every column of the cleaned frame.
pub fn correlation(config: &RunConfig) -> Result<CorrelationMatrix> {
    let frame = clean_frame(&load_frame(config)?)?;
    let matrix = pearson_correlation(&frame, frame.feature_names())?;
    write_atomic(&config.output_dir.join(CORRELATION_FILE), matrix.to_csv().as_bytes())?;
    Ok(matrix)
}

/// Human-readable schema and row statistics for the configured data.
pub fn inspect(config: &RunConfig) -> Result<String> {
    let raw = load_frame(config)?;
    let fp = DatasetFingerprint::of(&raw);
    let mut out = format!(
        "rows: {}\ndates: {} .. {}\nsha256: {}\n\n{:<16} {:>8} {:>14} {:>14} {:>14}\n",
        fp.rows, fp.first_date, fp.last_date, fp.sha256, "feature", "missing", "min", "mean", "max"
    );
    for (name, col) in raw.feature_names().iter().zip(raw.columns()) {
        let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let missing = col.len() - present.len();
        if present.is_empty() {
            out.push_str(&format!(
                "{name:<16} {missing:>8} {:>14} {:>14} {:>14}\n",
                "-", "-", "-"
            ));
            continue;
        }
        let min = present.iter().copied().fold(f64::INFINITY, f64::min);
        let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        out.push_str(&format!(
            "{name:<16} {missing:>8} {min:>14.3} {mean:>14.3} {max:>14.3}\n"
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn forecast_steps_cover_whole_months() {
        assert_eq!(forecast_steps(date(2020, 12, 31), 72), 2191);
        assert_eq!(forecast_steps(date(2020, 12, 31), 1), 31);
        // starts mid-month: the first month is partial
        assert_eq!(forecast_steps(date(2021, 1, 15), 1), 16);
        assert_eq!(forecast_steps(date(2021, 1, 31), 2), 28 + 31);
    }

    #[test]
    fn prepare_synthetic_defaults() {
        let cfg = RunConfig::synthetic(2106, 1);
        let p = prepare(&cfg).unwrap();
        assert_eq!(p.frame.len(), 2106);
        assert_eq!(p.train.len(), 1474 - 30);
        assert_eq!(p.test.len(), 632 - 30);
        assert_eq!(p.train.n_features(), 11);
        // test windows start after the last training date
        assert!(p.test.start_dates[0] > p.train.target_dates[p.train.len() - 1]);
        let train_rrp = &p.frame.column("rrp").unwrap()[..1474];
        let above = train_rrp.iter().filter(|v| **v > p.spike_threshold).count();
        assert!((140..=148).contains(&above), "{above}");
    }

    #[test]
    fn atomic_write_leaves_only_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        let entries = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(entries, 1);
    }
}
