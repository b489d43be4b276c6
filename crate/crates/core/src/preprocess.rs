//! Min-max scaling, chronological splitting and sliding-window datasets.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, TimeSeriesFrame};
use crate::nn::Tensor;

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_HORIZON: usize = 1;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("row range {0:?} is empty or out of bounds")]
    EmptyRange(Range<usize>),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("series of {len} rows is too short for window {window} + horizon {horizon}")]
    SeriesTooShort { len: usize, window: usize, horizon: usize },
    #[error("column `{0}` contains missing values")]
    MissingValues(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span == 0.0 {
            0.0
        } else {
            (x - self.min) / span
        }
    }

    pub fn unscale(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }
}

/// Per-feature extrema fitted on training rows.
///
/// Serialized as a JSON object mapping feature name to `{min, max}`; the
/// feature order is kept alongside so a scaler can be reapplied to a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_names: Vec<String>,
    pub ranges: BTreeMap<String, FeatureRange>,
}

impl ScalerParams {
    pub fn range(&self, feature: &str) -> Result<FeatureRange> {
        self.ranges
            .get(feature)
            .copied()
            .ok_or_else(|| PreprocessError::UnknownFeature(feature.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn check_complete(frame: &TimeSeriesFrame) -> Result<()> {
    for (name, col) in frame.feature_names().iter().zip(frame.columns()) {
        if col.iter().any(|v| v.is_nan()) {
            return Err(PreprocessError::MissingValues(name.clone()));
        }
    }
    Ok(())
}

/// Fits extrema over `rows` only.
pub fn fit_minmax(frame: &TimeSeriesFrame, rows: Range<usize>) -> Result<ScalerParams> {
    if rows.is_empty() || rows.end > frame.len() {
        return Err(PreprocessError::EmptyRange(rows));
    }
    let mut ranges = BTreeMap::new();
    for (name, col) in frame.feature_names().iter().zip(frame.columns()) {
        let slice = &col[rows.clone()];
        if slice.iter().any(|v| v.is_nan()) {
            return Err(PreprocessError::MissingValues(name.clone()));
        }
        let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.insert(name.clone(), FeatureRange { min, max });
    }
    Ok(ScalerParams {
        feature_names: frame.feature_names().to_vec(),
        ranges,
    })
}

/// `x' = (x − min)/(max − min)`, constant features map to 0, no clamping.
pub fn apply_minmax(frame: &TimeSeriesFrame, params: &ScalerParams) -> Result<TimeSeriesFrame> {
    for name in frame.feature_names() {
        params.range(name)?;
    }
    Ok(frame.map_columns(|name, col| {
        let r = params.ranges[name];
        Ok(col.iter().map(|&x| r.scale(x)).collect())
    })?)
}

pub fn invert_minmax(values: &[f64], params: &ScalerParams, feature: &str) -> Result<Vec<f64>> {
    let r = params.range(feature)?;
    Ok(values.iter().map(|&x| r.unscale(x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

impl SplitSpec {
    /// `floor(n · train_fraction)`.
    pub fn train_end_index(&self, n: usize) -> usize {
        (n as f64 * self.train_fraction).floor() as usize
    }
}

/// Train rows `[0, floor(N·f))`, test rows the remainder, in time order.
pub fn chrono_split(frame: &TimeSeriesFrame, spec: SplitSpec) -> Result<(TimeSeriesFrame, TimeSeriesFrame)> {
    let n = frame.len();
    if n < 2 {
        return Err(PreprocessError::TooFewRows(n));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(PreprocessError::Invalid(format!(
            "train_fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let end = spec.train_end_index(n);
    if end == 0 || end == n {
        return Err(PreprocessError::TooFewRows(n));
    }
    Ok((frame.slice_rows(0, end)?, frame.slice_rows(end, n)?))
}

/// Supervised pairs: inputs `n × window × F`, targets `n × horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub window: usize,
    pub horizon: usize,
    pub target_feature: String,
    pub feature_names: Vec<String>,
    /// Date of the first input row of each sample.
    pub start_dates: Vec<NaiveDate>,
    /// Date of the first target row of each sample.
    pub target_dates: Vec<NaiveDate>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn target_index(&self) -> usize {
        self.feature_names
            .iter()
            .position(|n| *n == self.target_feature)
            .expect("target feature is part of the inputs")
    }

    /// Samples `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let per_in = self.window * self.n_features();
        let inputs = Tensor::new(
            vec![end - start, self.window, self.n_features()],
            self.inputs.data()[start * per_in..end * per_in].to_vec(),
        )
        .expect("slice of a consistent tensor");
        let targets = Tensor::new(
            vec![end - start, self.horizon],
            self.targets.data()[start * self.horizon..end * self.horizon].to_vec(),
        )
        .expect("slice of a consistent tensor");
        Self {
            inputs,
            targets,
            window: self.window,
            horizon: self.horizon,
            target_feature: self.target_feature.clone(),
            feature_names: self.feature_names.clone(),
            start_dates: self.start_dates[start..end].to_vec(),
            target_dates: self.target_dates[start..end].to_vec(),
        }
    }

    /// Gathers the samples at `indices` into a batch `(inputs, targets)`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let per_in = self.window * self.n_features();
        let mut x = Vec::with_capacity(indices.len() * per_in);
        let mut y = Vec::with_capacity(indices.len() * self.horizon);
        for &i in indices {
            x.extend_from_slice(&self.inputs.data()[i * per_in..(i + 1) * per_in]);
            y.extend_from_slice(&self.targets.data()[i * self.horizon..(i + 1) * self.horizon]);
        }
        (
            Tensor::new(vec![indices.len(), self.window, self.n_features()], x).unwrap(),
            Tensor::new(vec![indices.len(), self.horizon], y).unwrap(),
        )
    }
}

/// Sample `i` reads rows `[i, i+window)` and targets rows
/// `[i+window, i+window+horizon)` of `target_feature`.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    window: usize,
    horizon: usize,
    target_feature: &str,
) -> Result<WindowedDataset> {
    if window == 0 || horizon == 0 {
        return Err(PreprocessError::Invalid("window and horizon must be ≥ 1".into()));
    }
    let target_col = frame
        .index_of(target_feature)
        .ok_or_else(|| PreprocessError::UnknownFeature(target_feature.to_string()))?;
    let n = frame.len();
    if n < window + horizon {
        return Err(PreprocessError::SeriesTooShort {
            len: n,
            window,
            horizon,
        });
    }
    check_complete(frame)?;
    let f = frame.n_features();
    let samples = n - window - horizon + 1;
    let rows: Vec<Vec<f64>> = (0..n).map(|r| frame.row(r)).collect();
    let mut x = Vec::with_capacity(samples * window * f);
    let mut y = Vec::with_capacity(samples * horizon);
    let target = &frame.columns()[target_col];
    for i in 0..samples {
        for row in &rows[i..i + window] {
            x.extend_from_slice(row);
        }
        y.extend_from_slice(&target[i + window..i + window + horizon]);
    }
    Ok(WindowedDataset {
        inputs: Tensor::new(vec![samples, window, f], x).expect("window layout"),
        targets: Tensor::new(vec![samples, horizon], y).expect("window layout"),
        window,
        horizon,
        target_feature: target_feature.to_string(),
        feature_names: frame.feature_names().to_vec(),
        start_dates: frame.dates()[..samples].to_vec(),
        target_dates: frame.dates()[window..window + samples].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn frame(cols: &[(&str, Vec<f64>)]) -> TimeSeriesFrame {
        let n = cols[0].1.len();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        TimeSeriesFrame::new(
            (0..n).map(|i| start + Duration::days(i as i64)).collect(),
            cols.iter().map(|(n, _)| n.to_string()).collect(),
            cols.iter().map(|(_, c)| c.clone()).collect(),
        )
        .unwrap()
    }

    fn ramp(n: usize) -> TimeSeriesFrame {
        frame(&[
            ("rrp", (0..n).map(|i| i as f64).collect()),
            ("demand", (0..n).map(|i| 100.0 + i as f64).collect()),
        ])
    }

    #[test]
    fn fit_extrema() {
        let p = fit_minmax(&frame(&[("a", vec![2.0, 4.0, 6.0])]), 0..3).unwrap();
        assert_eq!(p.range("a").unwrap(), FeatureRange { min: 2.0, max: 6.0 });
        let p = fit_minmax(&frame(&[("a", vec![5.0, 5.0, 5.0])]), 0..3).unwrap();
        assert_eq!(p.range("a").unwrap(), FeatureRange { min: 5.0, max: 5.0 });
        let p = fit_minmax(&frame(&[("a", vec![0.0, 10.0]), ("b", vec![-1.0, 1.0])]), 0..2).unwrap();
        assert_eq!(p.range("a").unwrap(), FeatureRange { min: 0.0, max: 10.0 });
        assert_eq!(p.range("b").unwrap(), FeatureRange { min: -1.0, max: 1.0 });
    }

    #[test]
    fn fit_uses_only_given_rows() {
        let p = fit_minmax(&frame(&[("a", vec![1.0, 2.0, 100.0])]), 0..2).unwrap();
        assert_eq!(p.range("a").unwrap().max, 2.0);
        assert!(matches!(
            fit_minmax(&frame(&[("a", vec![1.0])]), 0..0),
            Err(PreprocessError::EmptyRange(_))
        ));
    }

    #[test]
    fn apply_and_invert() {
        let f = frame(&[("a", vec![2.0, 4.0, 6.0])]);
        let p = fit_minmax(&f, 0..3).unwrap();
        assert_eq!(apply_minmax(&f, &p).unwrap().column("a").unwrap(), &[0.0, 0.5, 1.0]);
        assert_eq!(invert_minmax(&[0.0, 0.5, 1.0], &p, "a").unwrap(), vec![2.0, 4.0, 6.0]);
        assert_eq!(invert_minmax(&[1.5], &p, "a").unwrap(), vec![8.0]);
        let test = frame(&[("a", vec![8.0])]);
        assert_eq!(apply_minmax(&test, &p).unwrap().column("a").unwrap(), &[1.5]);

        let flat = frame(&[("c", vec![5.0, 5.0])]);
        let p = fit_minmax(&flat, 0..2).unwrap();
        assert_eq!(apply_minmax(&flat, &p).unwrap().column("c").unwrap(), &[0.0, 0.0]);
        assert_eq!(invert_minmax(&[0.3, 9.0], &p, "c").unwrap(), vec![5.0, 5.0]);
    }

    #[test]
    fn unknown_feature() {
        let p = fit_minmax(&frame(&[("a", vec![1.0, 2.0])]), 0..2).unwrap();
        assert!(matches!(
            invert_minmax(&[0.0], &p, "b"),
            Err(PreprocessError::UnknownFeature(_))
        ));
        assert!(matches!(
            apply_minmax(&frame(&[("b", vec![1.0])]), &p),
            Err(PreprocessError::UnknownFeature(_))
        ));
    }

    #[test]
    fn scaler_json_roundtrip() {
        let p = fit_minmax(&ramp(10), 0..7).unwrap();
        let text = p.to_json();
        assert!(text.contains("\"demand\""));
        assert_eq!(ScalerParams::from_json(&text).unwrap(), p);
    }

    #[test]
    fn split_sizes() {
        for (n, train, test) in [(10, 7, 3), (2, 1, 1), (2106, 1474, 632)] {
            let (a, b) = chrono_split(&ramp(n), SplitSpec::default()).unwrap();
            assert_eq!((a.len(), b.len()), (train, test));
            assert!(a.last_date() < b.dates()[0]);
        }
        assert!(matches!(
            chrono_split(&ramp(1), SplitSpec::default()),
            Err(PreprocessError::TooFewRows(1))
        ));
    }

    #[test]
    fn window_counts_and_layout() {
        let ds = make_windows(&ramp(10), 3, 1, "rrp").unwrap();
        assert_eq!(ds.len(), 7);
        assert_eq!(ds.inputs.shape(), &[7, 3, 2]);
        // sample 0: rows 0..2, features (rrp, demand) interleaved per row
        assert_eq!(&ds.inputs.data()[..6], &[0.0, 100.0, 1.0, 101.0, 2.0, 102.0]);
        assert_eq!(ds.targets.data()[0], 3.0);
        assert_eq!(make_windows(&ramp(4), 3, 1, "rrp").unwrap().len(), 1);
        assert!(matches!(
            make_windows(&ramp(3), 3, 1, "rrp"),
            Err(PreprocessError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn multi_step_targets() {
        let ds = make_windows(&ramp(10), 3, 2, "rrp").unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(&ds.targets.data()[..4], &[3.0, 4.0, 4.0, 5.0]);
        let (x, y) = ds.batch(&[5]);
        assert_eq!(x.data()[0], 5.0);
        assert_eq!(y.data(), &[8.0, 9.0]);
    }

    #[test]
    fn windows_reject_missing() {
        let f = frame(&[("rrp", vec![1.0, f64::NAN, 3.0, 4.0])]);
        assert!(matches!(
            make_windows(&f, 2, 1, "rrp"),
            Err(PreprocessError::MissingValues(_))
        ));
    }
}
