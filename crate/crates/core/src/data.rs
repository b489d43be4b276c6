//! Electricity-market data: CSV ingestion, imputation, calendar features,
//! correlation analysis and a seeded synthetic generator.
//!
//! A [`TimeSeriesFrame`] is a daily, date-indexed table of named `f64`
//! columns. Missing observations are stored as `NaN` (see [`MISSING`]) until
//! [`forward_fill`] removes them.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel for a missing cell.
pub const MISSING: f64 = f64::NAN;

/// Canonical feature names, in the order the loader emits them.
pub const CANONICAL_FEATURES: [&str; 10] = [
    "demand",
    "rrp",
    "solar_exposure",
    "max_temp",
    "min_temp",
    "rainfall",
    "rrp_positive",
    "rrp_negative",
    "holiday",
    "school_day",
];

/// Columns parsed as Y/N, true/false or 1/0.
pub const BOOLEAN_FEATURES: [&str; 2] = ["holiday", "school_day"];

/// Columns appended by [`add_seasonal_features`].
pub const CALENDAR_FEATURES: [&str; 3] = ["month_sin", "month_cos", "weekend"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("input contains no data rows")]
    EmptyFile,
    #[error("required column `{0}` is absent")]
    MissingColumn(String),
    #[error("date {0} appears more than once")]
    DuplicateDate(NaiveDate),
    #[error("row {row}: cannot parse date `{value}`")]
    BadDate { row: usize, value: String },
    #[error("row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("frame shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    /// `YYYY-MM-DD`
    #[default]
    Iso,
    /// `DD/MM/YYYY`
    DayFirst,
}

impl DateFormat {
    fn pattern(self) -> &'static str {
        match self {
            DateFormat::Iso => "%Y-%m-%d",
            DateFormat::DayFirst => "%d/%m/%Y",
        }
    }
}

/// Maps canonical column names to the header names found in a CSV file.
///
/// Header matching is case-insensitive, and a header equal to the canonical
/// name itself is always accepted, so frames written by [`write_csv`] load
/// back with the default schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date_column: String,
    pub date_format: DateFormat,
    pub columns: BTreeMap<String, String>,
    /// Canonical names that must be present.
    pub required: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        let columns = [
            ("demand", "demand"),
            ("rrp", "RRP"),
            ("solar_exposure", "solar_exposure"),
            ("max_temp", "max_temperature"),
            ("min_temp", "min_temperature"),
            ("rainfall", "rainfall"),
            ("rrp_positive", "RRP_positive"),
            ("rrp_negative", "RRP_negative"),
            ("holiday", "holiday"),
            ("school_day", "school_day"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            date_column: "date".into(),
            date_format: DateFormat::Iso,
            columns,
            required: vec!["rrp".into()],
        }
    }
}

/// Daily multivariate series. Column `j` is `columns[j]`, named `names[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeriesFrame {
    /// Builds a frame, checking lengths, name uniqueness and date order.
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if dates.is_empty() {
            return Err(DataError::EmptyFile);
        }
        if names.len() != columns.len() {
            return Err(DataError::Shape(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::Shape(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some(col) = columns.iter().position(|c| c.len() != dates.len()) {
            return Err(DataError::Shape(format!(
                "column `{}` has length {}, expected {}",
                names[col],
                columns[col].len(),
                dates.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] == pair[0] {
                return Err(DataError::DuplicateDate(pair[1]));
            }
            if pair[1] < pair[0] {
                return Err(DataError::Shape("dates are not increasing".into()));
            }
        }
        Ok(Self { dates, names, columns })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.index_of(name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    /// Values of every feature at one row, in column order.
    pub fn row(&self, index: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[index]).collect()
    }

    pub fn last_date(&self) -> NaiveDate {
        *self.dates.last().expect("frame is never empty")
    }

    pub fn count_missing(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|v| v.is_nan()).count())
            .sum()
    }

    /// Returns a copy restricted to `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| self.column(n).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dates.clone(), names.to_vec(), columns)
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(DataError::Shape(format!(
                "row range {start}..{end} invalid for {} rows",
                self.len()
            )));
        }
        Self::new(
            self.dates[start..end].to_vec(),
            self.names.clone(),
            self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
        )
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if self.index_of(name).is_some() {
            return Err(DataError::Shape(format!("duplicate feature name `{name}`")));
        }
        if values.len() != self.len() {
            return Err(DataError::Shape(format!(
                "column `{name}` has length {}, expected {}",
                values.len(),
                self.len()
            )));
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(self)
    }

    /// Replaces the values of an existing column.
    pub fn map_columns(&self, mut f: impl FnMut(&str, &[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let columns = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| f(n, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dates.clone(), self.names.clone(), columns)
    }

    /// SHA-256 over feature names, dates and the little-endian bytes of
    /// every value, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        for d in &self.dates {
            hasher.update(d.num_days_from_ce().to_le_bytes());
        }
        for col in &self.columns {
            for v in col {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_number(cell: &str) -> f64 {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return MISSING;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).unwrap_or(MISSING)
}

fn parse_flag(cell: &str) -> f64 {
    match cell.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "true" | "1" | "1.0" => 1.0,
        "n" | "no" | "false" | "0" | "0.0" => 0.0,
        _ => MISSING,
    }
}

/// Parses CSV text according to `schema`.
pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(DataError::EmptyFile),
        Err(e) => return Err(e.into()),
    };
    let find = |wanted: &str, canonical: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(wanted))
            .or_else(|| headers.iter().position(|h| h.eq_ignore_ascii_case(canonical)))
    };

    let date_idx = find(&schema.date_column, "date").ok_or_else(|| DataError::MissingColumn("date".into()))?;

    let mut picked: Vec<(String, usize)> = Vec::new();
    for canonical in CANONICAL_FEATURES {
        let header = schema.columns.get(canonical).map(String::as_str).unwrap_or(canonical);
        match find(header, canonical) {
            Some(idx) => picked.push((canonical.to_string(), idx)),
            None if schema.required.iter().any(|r| r == canonical) => {
                return Err(DataError::MissingColumn(canonical.to_string()))
            }
            None => {}
        }
    }
    for extra in schema.columns.keys() {
        if !CANONICAL_FEATURES.contains(&extra.as_str()) {
            if let Some(idx) = find(&schema.columns[extra], extra) {
                picked.push((extra.clone(), idx));
            } else if schema.required.contains(extra) {
                return Err(DataError::MissingColumn(extra.clone()));
            }
        }
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let raw_date = record.get(date_idx).unwrap_or("");
        let date =
            NaiveDate::parse_from_str(raw_date, schema.date_format.pattern()).map_err(|_| DataError::BadDate {
                row,
                value: raw_date.to_string(),
            })?;
        let values = picked
            .iter()
            .map(|(name, idx)| {
                let cell = record.get(*idx).unwrap_or("");
                if BOOLEAN_FEATURES.contains(&name.as_str()) {
                    parse_flag(cell)
                } else {
                    parse_number(cell)
                }
            })
            .collect();
        rows.push((date, values));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile);
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(pair) = rows.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(DataError::DuplicateDate(pair[0].0));
    }

    let names: Vec<String> = picked.iter().map(|(n, _)| n.clone()).collect();
    let (lo, hi) = (
        names.iter().position(|n| n == "min_temp"),
        names.iter().position(|n| n == "max_temp"),
    );
    if let (Some(lo), Some(hi)) = (lo, hi) {
        for (row, (date, values)) in rows.iter().enumerate() {
            if values[lo] > values[hi] {
                return Err(DataError::InvalidRecord {
                    row: row + 1,
                    reason: format!("min_temp exceeds max_temp on {date}"),
                });
            }
        }
    }

    let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
    let mut dates = Vec::with_capacity(rows.len());
    for (date, values) in rows {
        dates.push(date);
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
    }
    TimeSeriesFrame::new(dates, names, columns)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(DataError::EmptyFile);
    }
    parse_csv(&text, schema)
}

/// Serializes a frame with canonical names as headers, ISO dates, shortest
/// round-trip float formatting and empty cells for missing values.
pub fn write_csv(frame: &TimeSeriesFrame) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    header.extend(frame.names.iter().cloned());
    writer.write_record(&header)?;
    for (i, date) in frame.dates.iter().enumerate() {
        let mut record = vec![date.format("%Y-%m-%d").to_string()];
        record.extend(frame.columns.iter().map(|c| {
            let v = c[i];
            if v.is_nan() {
                String::new()
            } else {
                format!("{v:?}")
            }
        }));
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| DataError::Shape(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Replaces each missing cell with the latest earlier observation; cells
/// before the first observation take that first observation.
pub fn forward_fill(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    frame.map_columns(|name, values| {
        let first = values
            .iter()
            .copied()
            .find(|v| !v.is_nan())
            .ok_or_else(|| DataError::AllMissingColumn(name.to_string()))?;
        let mut last = first;
        Ok(values
            .iter()
            .map(|&v| {
                if !v.is_nan() {
                    last = v;
                }
                last
            })
            .collect())
    })
}

/// `(month_sin, month_cos)` for a date; month `m` maps to angle `2π(m−1)/12`.
pub fn month_encoding(date: NaiveDate) -> (f64, f64) {
    let angle = 2.0 * PI * f64::from(date.month0()) / 12.0;
    (angle.sin(), angle.cos())
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Calendar feature values for a date, in [`CALENDAR_FEATURES`] order.
pub fn calendar_values(date: NaiveDate) -> [f64; 3] {
    let (s, c) = month_encoding(date);
    [s, c, if is_weekend(date) { 1.0 } else { 0.0 }]
}

/// Appends `month_sin`, `month_cos` and `weekend` columns.
pub fn add_seasonal_features(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for date in &frame.dates {
        for (col, v) in cols.iter_mut().zip(calendar_values(*date)) {
            col.push(v);
        }
    }
    let [s, c, w] = cols;
    frame
        .clone()
        .with_column(CALENDAR_FEATURES[0], s)?
        .with_column(CALENDAR_FEATURES[1], c)?
        .with_column(CALENDAR_FEATURES[2], w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their rows and columns are all 0.0.
    pub constant_columns: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// CSV with row and column headers, values at 6 decimal places.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson coefficients with population normalization.
pub fn pearson_correlation(frame: &TimeSeriesFrame, columns: &[String]) -> Result<CorrelationMatrix> {
    if frame.len() < 2 {
        return Err(DataError::TooFewRows(frame.len()));
    }
    let n = frame.len() as f64;
    let mut centered = Vec::with_capacity(columns.len());
    let mut norms = Vec::with_capacity(columns.len());
    for name in columns {
        let col = frame.column(name)?;
        if col.iter().any(|v| v.is_nan()) {
            return Err(DataError::InvalidRecord {
                row: col.iter().position(|v| v.is_nan()).unwrap() + 1,
                reason: format!("column `{name}` has missing values"),
            });
        }
        let mean = col.iter().sum::<f64>() / n;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let var = dev.iter().map(|d| d * d).sum::<f64>() / n;
        norms.push(var.sqrt());
        centered.push(dev);
    }
    let f = columns.len();
    let mut values = vec![vec![0.0; f]; f];
    let constant: Vec<bool> = norms.iter().map(|&s| s == 0.0).collect();
    for i in 0..f {
        if constant[i] {
            continue;
        }
        values[i][i] = 1.0;
        for j in (i + 1)..f {
            if constant[j] {
                continue;
            }
            let cov = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / n;
            let r = (cov / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.to_vec(),
        values,
        constant_columns: columns
            .iter()
            .zip(&constant)
            .filter(|(_, c)| **c)
            .map(|(n, _)| n.clone())
            .collect(),
    })
}

/// Knobs for [`synth_series_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub start: NaiveDate,
    /// Price sensitivity to demand, $/MWh per MWh. Must be positive.
    pub demand_coupling: f64,
    pub noise_sd: f64,
    pub spike_fraction: f64,
    pub spike_factor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            demand_coupling: 0.0015,
            noise_sd: 6.0,
            spike_fraction: 0.03,
            spike_factor: 3.0,
        }
    }
}

fn is_public_holiday(date: NaiveDate) -> bool {
    matches!(
        (date.month(), date.day()),
        (1, 1) | (1, 26) | (4, 25) | (11, 3) | (12, 25) | (12, 26)
    )
}

fn is_school_break(date: NaiveDate) -> bool {
    match date.month() {
        1 => true,
        12 => date.day() >= 20,
        4 => date.day() <= 14,
        7 => date.day() <= 12,
        9 => date.day() >= 21,
        10 => date.day() <= 5,
        _ => false,
    }
}

/// Deterministic synthetic market data with the full canonical schema.
pub fn synth_series(n_days: usize, seed: u64) -> TimeSeriesFrame {
    synth_series_with(n_days, seed, &SynthConfig::default())
}

pub fn synth_series_with(n_days: usize, seed: u64, cfg: &SynthConfig) -> TimeSeriesFrame {
    assert!(n_days >= 1, "synth_series needs at least one day");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let rain = Exp::new(0.2).unwrap();

    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_days); CANONICAL_FEATURES.len()];
    let mut dates = Vec::with_capacity(n_days);
    let mut demand_ar = 0.0;
    for t in 0..n_days {
        let date = cfg.start + Duration::days(t as i64);
        let doy = f64::from(date.ordinal0());
        let year_angle = 2.0 * PI * doy / 365.25;
        let holiday = is_public_holiday(date);
        let weekend = is_weekend(date);

        // Southern-hemisphere seasons: hottest mid-January.
        let max_temp = 20.0 + 6.5 * (year_angle - 2.0 * PI * 15.0 / 365.25).cos() + 3.0 * unit.sample(&mut rng);
        let min_temp = max_temp - 8.0 - (2.0 * unit.sample(&mut rng)).abs();
        let solar = (15.0 + 9.0 * (year_angle - 2.0 * PI * 10.0 / 365.25).cos() + 4.0 * unit.sample(&mut rng)).max(0.5);
        let rainfall = if rng.random::<f64>() < 0.3 {
            rain.sample(&mut rng)
        } else {
            0.0
        };

        demand_ar = 0.7 * demand_ar + 3000.0 * unit.sample(&mut rng);
        let heat = (max_temp - 28.0).max(0.0);
        let demand = 110_000.0 + 12_000.0 * (year_angle - 2.0 * PI * 200.0 / 365.25).cos() + 1_500.0 * heat
            - if weekend { 10_000.0 } else { 0.0 }
            - if holiday { 8_000.0 } else { 0.0 }
            + demand_ar;

        let mut rrp =
            -100.0 + 8.0 * year_angle.sin() + 4.0 * (2.0 * PI * t as f64 / 7.0).sin() + cfg.demand_coupling * demand
                - 0.3 * (solar - 15.0)
                + cfg.noise_sd * unit.sample(&mut rng);
        if rng.random::<f64>() < cfg.spike_fraction {
            rrp *= cfg.spike_factor;
        }

        let school_day = !weekend && !holiday && !is_school_break(date);
        let row = [
            demand,
            rrp,
            solar,
            max_temp,
            min_temp,
            rainfall,
            rrp.max(0.0),
            rrp.min(0.0),
            if holiday { 1.0 } else { 0.0 },
            if school_day { 1.0 } else { 0.0 },
        ];
        for (col, v) in cols.iter_mut().zip(row) {
            col.push(v);
        }
        dates.push(date);
    }
    let names = CANONICAL_FEATURES.iter().map(|s| s.to_string()).collect();
    TimeSeriesFrame::new(dates, names, cols).expect("generator emits a consistent frame")
}
