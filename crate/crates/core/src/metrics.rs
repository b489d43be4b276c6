//! Forecast evaluation: RMSE and MAE on price values, and accuracy,
//! precision, recall and F-score on price-spike labels.
//!
//! A value is a spike when it lies strictly above a threshold resolved from
//! training actuals with a nearest-rank quantile. Applying that threshold to
//! both the actual and the predicted series yields the label pairs behind
//! the confusion counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {actual} actual vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("quantile {0} outside (0, 1)")]
    InvalidQuantile(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(i) = actual
        .iter()
        .zip(predicted)
        .position(|(a, p)| !a.is_finite() || !p.is_finite())
    {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

/// `sqrt((1/n) Σ (y_j − ŷ_j)²)`
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// `(1/n) Σ |y_j − ŷ_j|`
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sae: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum();
    Ok(sae / actual.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeRule {
    pub quantile: f64,
}

impl Default for SpikeRule {
    fn default() -> Self {
        Self { quantile: 0.90 }
    }
}

/// Nearest-rank quantile: the order statistic at 1-based index `ceil(q·n)`.
pub fn resolve_spike_threshold(train_actuals: &[f64], rule: SpikeRule) -> Result<f64> {
    if train_actuals.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(rule.quantile > 0.0 && rule.quantile < 1.0) {
        return Err(MetricsError::InvalidQuantile(rule.quantile));
    }
    if let Some(i) = train_actuals.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let mut sorted = train_actuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // q·n can land a hair above an integer in floating point (e.g. 0.3·10).
    let rank = ((rule.quantile * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn spike_labels(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v > threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_from_labels(actual: &[bool], predicted: &[bool]) -> Result<ConfusionCounts> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&a, &p) in actual.iter().zip(predicted) {
        match (a, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// A metric whose denominator was zero; it is reported as 0.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedMetric {
    Precision,
    Recall,
    FScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub undefined: Vec<UndefinedMetric>,
}

/// `2·p·r/(p + r)`, or 0 when `p + r = 0`.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum > 0.0 {
        2.0 * precision * recall / sum
    } else {
        0.0
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let mut undefined = Vec::new();
    let ratio = |num: u64, den: u64, which: UndefinedMetric, undefined: &mut Vec<UndefinedMetric>| {
        if den == 0 {
            undefined.push(which);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (c.tp + c.tn) as f64 / n as f64;
    let precision = ratio(c.tp, c.tp + c.fp, UndefinedMetric::Precision, &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, UndefinedMetric::Recall, &mut undefined);
    if precision + recall == 0.0 {
        undefined.push(UndefinedMetric::FScore);
    }
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f_score: f_score(precision, recall),
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    #[serde(flatten)]
    pub confusion: ConfusionCounts,
    pub spike_threshold: f64,
    pub n: usize,
    pub undefined: Vec<UndefinedMetric>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Every metric for one forecast, with spikes defined by `threshold`.
pub fn full_report(actual: &[f64], predicted: &[f64], threshold: f64) -> Result<MetricsReport> {
    let rmse = rmse(actual, predicted)?;
    let mae = mae(actual, predicted)?;
    let confusion = confusion_from_labels(&spike_labels(actual, threshold), &spike_labels(predicted, threshold))?;
    let m = classification_metrics(&confusion)?;
    Ok(MetricsReport {
        rmse,
        mae,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f_score: m.f_score,
        confusion,
        spike_threshold: threshold,
        n: actual.len(),
        undefined: m.undefined,
    })
}

/// One row per model in the column order Accuracy (%), Precision, Recall,
/// F-Score, followed by RMSE and MAE. Fixed six-decimal formatting.
pub fn comparison_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("Algorithm,Accuracy (%),Precision,Recall,F-Score,RMSE,MAE\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.accuracy * 100.0,
            r.precision,
            r.recall,
            r.f_score,
            r.rmse,
            r.mae
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_mae_hand_values() {
        let y = [1.0, 2.0, 3.0];
        let p = [2.0, 2.0, 2.0];
        assert!((rmse(&y, &p).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((mae(&y, &p).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(mae(&[0.0], &[3.0]).unwrap(), 3.0);
    }

    #[test]
    fn rmse_errors() {
        assert_eq!(rmse(&[], &[]), Err(MetricsError::EmptyInput));
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(rmse(&[f64::NAN], &[1.0]), Err(MetricsError::NonFinite(0)));
    }

    #[test]
    fn nearest_rank_threshold() {
        let v: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
        assert_eq!(resolve_spike_threshold(&v, SpikeRule { quantile: 0.9 }).unwrap(), 90.0);
        assert_eq!(resolve_spike_threshold(&v, SpikeRule { quantile: 0.3 }).unwrap(), 30.0);
        assert_eq!(resolve_spike_threshold(&v, SpikeRule { quantile: 0.31 }).unwrap(), 40.0);
        let flat = [7.0; 5];
        let t = resolve_spike_threshold(&flat, SpikeRule::default()).unwrap();
        assert_eq!(t, 7.0);
        assert!(spike_labels(&flat, t).iter().all(|s| !s));
        assert_eq!(
            resolve_spike_threshold(&[4.5], SpikeRule { quantile: 0.01 }).unwrap(),
            4.5
        );
        assert_eq!(
            resolve_spike_threshold(&[], SpikeRule::default()),
            Err(MetricsError::EmptyInput)
        );
    }

    #[test]
    fn confusion_enumeration() {
        let c = confusion_from_labels(&[true, false, true, false], &[true, false, false, true]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        let same = [true, false, false];
        let c = confusion_from_labels(&same, &same).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion_from_labels(&[true; 3], &[false; 3]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 3
            }
        );
        assert!(confusion_from_labels(&[true], &[]).is_err());
    }

    #[test]
    fn classification_hand_values() {
        let m = classification_metrics(&ConfusionCounts {
            tp: 5,
            tn: 90,
            fp: 3,
            fn_: 2,
        })
        .unwrap();
        assert!((m.accuracy - 0.95).abs() < 1e-15);
        assert!((m.precision - 0.625).abs() < 1e-15);
        assert!((m.recall - 5.0 / 7.0).abs() < 1e-15);
        assert!((m.f_score - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn degenerate_counts_flagged() {
        let m = classification_metrics(&ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 10,
            fn_: 0,
        })
        .unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f_score), (1.0, 0.0, 0.0, 0.0));
        assert_eq!(
            m.undefined,
            vec![
                UndefinedMetric::Precision,
                UndefinedMetric::Recall,
                UndefinedMetric::FScore
            ]
        );
        assert_eq!(
            classification_metrics(&ConfusionCounts::default()),
            Err(MetricsError::EmptyCounts)
        );
    }

    #[test]
    fn perfect_forecast_report() {
        let y = [10.0, 80.0, 20.0, 95.0];
        let r = full_report(&y, &y, 50.0).unwrap();
        assert_eq!((r.rmse, r.mae, r.accuracy), (0.0, 0.0, 1.0));
        assert_eq!((r.confusion.fp, r.confusion.fn_, r.confusion.tp), (0, 0, 2));
        assert_eq!(r.confusion.total() as usize, r.n);
    }

    #[test]
    fn report_json_is_flat() {
        let r = full_report(&[1.0, 3.0], &[2.0, 2.5], 2.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "rmse",
            "mae",
            "accuracy",
            "precision",
            "recall",
            "f_score",
            "tp",
            "fp",
            "tn",
            "fn",
            "n",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn comparison_layout() {
        let r = full_report(&[1.0, 3.0], &[1.0, 3.0], 2.0).unwrap();
        let csv = comparison_csv(&[("RNN".into(), r)]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Algorithm,Accuracy (%),Precision,Recall,F-Score,RMSE,MAE"
        );
        assert_eq!(
            lines.next().unwrap(),
            "RNN,100.000000,1.000000,1.000000,1.000000,0.000000,0.000000"
        );
    }
}
