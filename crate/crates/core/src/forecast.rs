//! Recursive multi-step forecasting past the end of the data.
//!
//! Each step predicts the next day's scaled target, appends a synthesized
//! row (the prediction plus projected exogenous features) and slides the
//! window forward. Future exogenous values come from a seasonal-naive
//! projection: the same calendar date one year earlier.

use std::collections::{BTreeMap, VecDeque};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{calendar_values, TimeSeriesFrame, CALENDAR_FEATURES};
use crate::nn::{ModelGraph, NnError, Tensor};
use crate::preprocess::{invert_minmax, PreprocessError, ScalerParams};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("history too short: {0}")]
    HistoryTooShort(String),
    #[error("non-finite prediction at step {step}")]
    NonFinitePrediction { step: usize },
    #[error("nothing to aggregate")]
    EmptyResult,
    #[error("invalid forecast dates: {0}")]
    InvalidDates(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub type Result<T> = std::result::Result<T, ForecastError>;

/// Anything that maps a `1 × window × features` block to the next scaled
/// target value.
pub trait StepPredictor {
    fn predict_next(&self, window: &Tensor) -> std::result::Result<f64, NnError>;
}

impl StepPredictor for ModelGraph {
    /// Uses the first horizon step of the model output.
    fn predict_next(&self, window: &Tensor) -> std::result::Result<f64, NnError> {
        Ok(self.predict(window)?.data()[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Daily,
    Monthly,
}

impl Resolution {
    fn as_str(self) -> &'static str {
        match self {
            Resolution::Daily => "daily",
            Resolution::Monthly => "monthly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// Forecast days, or the first day of each month for monthly output.
    pub dates: Vec<NaiveDate>,
    pub rrp_forecast: Vec<f64>,
    pub horizon_steps: usize,
    pub resolution: Resolution,
    /// Monthly rows built from fewer days than the calendar month has.
    pub partial_month: Vec<bool>,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,rrp_forecast,resolution,partial_month\n");
        for ((d, v), p) in self.dates.iter().zip(&self.rrp_forecast).zip(&self.partial_month) {
            out.push_str(&format!(
                "{},{v:.6},{},{}\n",
                d.format("%Y-%m-%d"),
                self.resolution.as_str(),
                if *p { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forecast serializes")
    }
}

/// Same month and day one year earlier; 29 February maps to 28 February.
pub fn one_year_back(date: NaiveDate) -> NaiveDate {
    let year = date.year() - 1;
    NaiveDate::from_ymd_opt(year, date.month(), date.day())
        .or_else(|| NaiveDate::from_ymd_opt(year, date.month(), date.day() - 1))
        .expect("day before an invalid leap day exists")
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    NaiveDate::from_ymd_opt(ny, nm, 1).unwrap().pred_opt().unwrap().day()
}

struct Projector<'a> {
    frame: &'a TimeSeriesFrame,
    calendar: Vec<(usize, usize)>,
    memo: BTreeMap<NaiveDate, Vec<f64>>,
}

impl Projector<'_> {
    fn observed(&self, date: NaiveDate) -> Vec<f64> {
        let idx = match self.frame.dates().binary_search(&date) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        self.frame.row(idx)
    }

    fn project(&mut self, date: NaiveDate) -> Vec<f64> {
        if let Some(row) = self.memo.get(&date) {
            return row.clone();
        }
        let source = one_year_back(date);
        let mut row = if source <= self.frame.last_date() {
            self.observed(source)
        } else {
            self.project(source)
        };
        let cal = calendar_values(date);
        for &(col, k) in &self.calendar {
            row[col] = cal[k];
        }
        self.memo.insert(date, row.clone());
        row
    }
}

/// Seasonal-naive feature rows for each future date, in frame column order.
///
/// Calendar columns (`month_sin`, `month_cos`, `weekend`) are computed
/// exactly from the future date, unscaled. Every other column, the target
/// included, is copied from one year earlier, recursing through projected
/// dates when the lookback itself lies in the future.
pub fn project_exogenous(frame: &TimeSeriesFrame, future_dates: &[NaiveDate]) -> Result<Vec<Vec<f64>>> {
    let span = (frame.last_date() - frame.dates()[0]).num_days() + 1;
    if span < 366 {
        return Err(ForecastError::HistoryTooShort(format!(
            "seasonal projection needs 366 days of history, frame spans {span}"
        )));
    }
    if future_dates.first().is_some_and(|d| *d <= frame.last_date()) {
        return Err(ForecastError::InvalidDates(
            "future dates must follow the last observation".into(),
        ));
    }
    if future_dates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ForecastError::InvalidDates(
            "future dates must be strictly increasing".into(),
        ));
    }
    let calendar = CALENDAR_FEATURES
        .iter()
        .enumerate()
        .filter_map(|(k, name)| frame.index_of(name).map(|col| (col, k)))
        .collect();
    let mut projector = Projector {
        frame,
        calendar,
        memo: BTreeMap::new(),
    };
    Ok(future_dates.iter().map(|&d| projector.project(d)).collect())
}

/// Iterated one-step forecast for `horizon_steps` days after the last row
/// of `scaled_frame`, reported in price units.
pub fn recursive_forecast(
    model: &dyn StepPredictor,
    scaled_frame: &TimeSeriesFrame,
    scaler: &ScalerParams,
    window: usize,
    horizon_steps: usize,
    target_feature: &str,
) -> Result<ForecastResult> {
    if window == 0 || scaled_frame.len() < window {
        return Err(ForecastError::HistoryTooShort(format!(
            "window {window} needs at least that many rows, frame has {}",
            scaled_frame.len()
        )));
    }
    let target = scaled_frame
        .index_of(target_feature)
        .ok_or_else(|| PreprocessError::UnknownFeature(target_feature.to_string()))?;
    let last = scaled_frame.last_date();
    let dates: Vec<NaiveDate> = (1..=horizon_steps as i64).map(|k| last + Duration::days(k)).collect();
    let mut future = project_exogenous(scaled_frame, &dates)?;

    for name in CALENDAR_FEATURES {
        if let Some(col) = scaled_frame.index_of(name) {
            let range = scaler.range(name)?;
            for row in &mut future {
                row[col] = range.scale(row[col]);
            }
        }
    }

    let n_features = scaled_frame.n_features();
    let mut buffer: VecDeque<Vec<f64>> = (scaled_frame.len() - window..scaled_frame.len())
        .map(|r| scaled_frame.row(r))
        .collect();
    let mut scaled_predictions = Vec::with_capacity(horizon_steps);
    for (step, mut row) in future.into_iter().enumerate() {
        let flat: Vec<f64> = buffer.iter().flatten().copied().collect();
        let x = Tensor::new(vec![1, window, n_features], flat)?;
        let pred = match model.predict_next(&x) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(NnError::NonFiniteActivation { .. }) => {
                return Err(ForecastError::NonFinitePrediction { step })
            }
            Err(e) => return Err(e.into()),
        };
        scaled_predictions.push(pred);
        row[target] = pred;
        buffer.pop_front();
        buffer.push_back(row);
    }
    Ok(ForecastResult {
        rrp_forecast: invert_minmax(&scaled_predictions, scaler, target_feature)?,
        partial_month: vec![false; dates.len()],
        dates,
        horizon_steps,
        resolution: Resolution::Daily,
    })
}

/// Mean of the daily values in each calendar month. Months not fully
/// covered by the daily span are kept and flagged as partial.
pub fn aggregate_monthly(daily: &ForecastResult) -> Result<ForecastResult> {
    if daily.resolution != Resolution::Daily {
        return Err(ForecastError::InvalidDates("input is not daily".into()));
    }
    if daily.is_empty() {
        return Err(ForecastError::EmptyResult);
    }
    let mut months: Vec<(NaiveDate, f64, u32)> = Vec::new();
    for (d, v) in daily.dates.iter().zip(&daily.rrp_forecast) {
        let first = d.with_day(1).unwrap();
        match months.last_mut() {
            Some((m, sum, count)) if *m == first => {
                *sum += v;
                *count += 1;
            }
            _ => months.push((first, *v, 1)),
        }
    }
    Ok(ForecastResult {
        dates: months.iter().map(|m| m.0).collect(),
        rrp_forecast: months.iter().map(|(_, s, c)| s / f64::from(*c)).collect(),
        partial_month: months
            .iter()
            .map(|(m, _, c)| *c < days_in_month(m.year(), m.month()))
            .collect(),
        horizon_steps: months.len(),
        resolution: Resolution::Monthly,
    })
}
