//! Mini-batch training with Adam or SGD, early stopping on a chronological
//! validation tail, and evaluation in price units.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricsError, MetricsReport};
use crate::nn::{Mode, ModelGraph, NnError, Tensor};
use crate::preprocess::{invert_minmax, PreprocessError, ScalerParams, WindowedDataset};

pub use crate::nn::mse_loss;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub early_stop_patience: usize,
    /// Fraction of training samples, taken from the chronological tail, held
    /// out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(TrainError::InvalidConfig(
                "validation_fraction must lie in [0, 0.5]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
        }
    }
}

/// One bias-corrected Adam step. Inputs are left untouched; the updated
/// parameters and state are returned.
pub fn adam_update(
    params: &[Tensor],
    grads: &[Tensor],
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(Vec<Tensor>, AdamState)> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(NnError::ShapeMismatch("params, grads and moments differ in count".into()).into());
    }
    let step = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut new_params = Vec::with_capacity(params.len());
    let mut new_m = Vec::with_capacity(params.len());
    let mut new_v = Vec::with_capacity(params.len());
    for (((p, g), m), v) in params.iter().zip(grads).zip(&state.m).zip(&state.v) {
        if !p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v) {
            return Err(
                NnError::ShapeMismatch(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())).into(),
            );
        }
        let mut pd = p.data().to_vec();
        let mut md = m.data().to_vec();
        let mut vd = v.data().to_vec();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        new_params.push(Tensor::new(p.shape().to_vec(), pd)?);
        new_m.push(Tensor::new(p.shape().to_vec(), md)?);
        new_v.push(Tensor::new(p.shape().to_vec(), vd)?);
    }
    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            step,
        },
    ))
}

pub fn sgd_update(params: &[Tensor], grads: &[Tensor], learning_rate: f64) -> Result<Vec<Tensor>> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| {
            if !p.same_shape(g) {
                return Err(NnError::ShapeMismatch("parameter vs gradient".into()).into());
            }
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .map(|(p, g)| p - learning_rate * g)
                .collect();
            Ok(Tensor::new(p.shape().to_vec(), data)?)
        })
        .collect()
}

/// Patience-based early stopping on strictly improving validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `(improved, should_stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.patience > 0 && self.since_best >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Wall-clock time per epoch; not part of the determinism contract.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Everything except timings, for bit-level comparisons.
    pub fn losses_bits(&self) -> (Vec<u64>, Vec<u64>, usize) {
        (
            self.train_loss.iter().map(|v| v.to_bits()).collect(),
            self.validation_loss.iter().map(|v| v.to_bits()).collect(),
            self.best_epoch,
        )
    }
}

const EVAL_BATCH: usize = 256;

/// Inference-mode predictions for every sample, flattened `n × horizon`.
pub fn predict_dataset(model: &ModelGraph, data: &WindowedDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len() * data.horizon);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk);
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Ok(out)
}

fn dataset_loss(model: &ModelGraph, data: &WindowedDataset) -> Result<f64> {
    let pred = predict_dataset(model, data)?;
    let pred = Tensor::new(data.targets.shape().to_vec(), pred)?;
    Ok(mse_loss(&pred, &data.targets)?.0)
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ ((batch as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

/// Trains `model` on `train_set`, returning the parameters with the lowest
/// validation loss (or training loss when no validation tail is held out).
pub fn train_model(
    model: ModelGraph,
    train_set: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(ModelGraph, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = train_set.len();
    let n_val = ((n as f64) * config.validation_fraction).floor() as usize;
    let n_val = if n_val >= n { 0 } else { n_val };
    let fit_set = train_set.slice(0, n - n_val);
    let val_set = (n_val > 0).then(|| train_set.slice(n - n_val, n));

    let mut model = model.with_mode(Mode::Training);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam_cfg = AdamConfig::from(config);
    let mut adam = AdamState::zeros_like(&model.clone_params());
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best_params = model.clone_params();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        epoch_seconds: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..fit_set.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = fit_set.batch(chunk);
            let (pred, cache) = match model.forward_seeded(&x, batch_seed(config.seed, epoch, b)) {
                Ok(out) => out,
                Err(NnError::NonFiniteActivation { .. }) => return Err(TrainError::DivergedLoss { epoch }),
                Err(e) => return Err(e.into()),
            };
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = model.backward(&cache, &grad)?;
            let params = model.clone_params();
            let updated = match config.optimizer {
                OptimizerKind::Adam => {
                    let (p, s) = adam_update(&params, &grads.params, &adam, &adam_cfg)?;
                    adam = s;
                    p
                }
                OptimizerKind::Sgd => sgd_update(&params, &grads.params, config.learning_rate)?,
            };
            model.set_params(updated)?;
        }
        let train_loss = loss_sum / fit_set.len() as f64;
        let val_loss = match &val_set {
            Some(v) => match dataset_loss(&model, v) {
                Ok(l) => l,
                Err(TrainError::Nn(NnError::NonFiniteActivation { .. })) => f64::NAN,
                Err(e) => return Err(e),
            },
            None => train_loss,
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        history.train_loss.push(train_loss);
        history.validation_loss.push(val_loss);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = model.clone_params();
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch().unwrap_or(0);
    model.set_params(best_params)?;
    Ok((model.with_mode(Mode::Inference), history))
}

/// Predicts the test set, maps predictions and targets back to price units
/// and computes the full metric report against `spike_threshold`.
pub fn evaluate_model(
    model: &ModelGraph,
    test_set: &WindowedDataset,
    scaler: &ScalerParams,
    spike_threshold: f64,
) -> Result<MetricsReport> {
    if test_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let predicted = predict_dataset(model, test_set)?;
    evaluate_predictions(&predicted, test_set, scaler, spike_threshold)
}

/// Metric report for scaled predictions aligned with `test_set.targets`.
pub fn evaluate_predictions(
    scaled_predictions: &[f64],
    test_set: &WindowedDataset,
    scaler: &ScalerParams,
    spike_threshold: f64,
) -> Result<MetricsReport> {
    let feature = &test_set.target_feature;
    let predicted = invert_minmax(scaled_predictions, scaler, feature)?;
    let actual = invert_minmax(test_set.targets.data(), scaler, feature)?;
    Ok(metrics::full_report(&actual, &predicted, spike_threshold)?)
}

/// Persistence forecast: every horizon step repeats the last observed
/// target value in the input window.
pub fn persistence_predictions(data: &WindowedDataset) -> Vec<f64> {
    let f = data.n_features();
    let target = data.target_index();
    let per = data.window * f;
    (0..data.len())
        .flat_map(|i| {
            let last = data.inputs.data()[i * per + (data.window - 1) * f + target];
            std::iter::repeat_n(last, data.horizon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeriesFrame;
    use crate::nn::Layer;
    use crate::preprocess::{fit_minmax, make_windows};
    use chrono::{Duration, NaiveDate};

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(vec![1], vec![v]).unwrap()]
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let p = scalar(0.0);
        let state = AdamState::zeros_like(&p);
        let (next, s) = adam_update(&p, &scalar(1.0), &state, &cfg).unwrap();
        let step = -next[0].data()[0];
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + ε).
        assert!((step - 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((step - 9.99999995e-4).abs() < 1e-11);
        assert_eq!(s.step, 1);
        assert_eq!(state.step, 0);
        assert_eq!(p[0].data(), &[0.0]);
    }

    #[test]
    fn adam_zero_gradient_and_determinism() {
        let cfg = AdamConfig::from(&TrainConfig::default());
        let p = scalar(3.0);
        let state = AdamState::zeros_like(&p);
        let (next, _) = adam_update(&p, &scalar(0.0), &state, &cfg).unwrap();
        assert_eq!(next, p);
        let a = adam_update(&p, &scalar(0.4), &state, &cfg).unwrap();
        let b = adam_update(&p, &scalar(0.4), &state, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(adam_update(&p, &[], &state, &cfg).is_err());
    }

    #[test]
    fn early_stopping_contract() {
        let losses = [5.0, 4.0, 3.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut es = EarlyStopping::new(5);
        let mut stopped_at = None;
        for (epoch, &l) in losses.iter().enumerate() {
            if es.observe(epoch, l).1 {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert!(stopped_at.unwrap() <= 8);
        assert!(es.best_epoch().unwrap() <= 3);
    }

    fn linear_dataset(n: usize) -> WindowedDataset {
        // rrp_t = 0.6·a_{t−1} + 0.3·b_{t−1} + 0.1, learnable by a single dense layer.
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let a: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 104_729) % 97) as f64 / 97.0).collect();
        let mut rrp = vec![0.5];
        for i in 1..n {
            rrp.push(0.6 * a[i - 1] + 0.3 * b[i - 1] + 0.1);
        }
        let frame = TimeSeriesFrame::new(
            (0..n).map(|i| start + Duration::days(i as i64)).collect(),
            vec!["a".into(), "b".into(), "rrp".into()],
            vec![a, b, rrp],
        )
        .unwrap();
        make_windows(&frame, 1, 1, "rrp").unwrap()
    }

    fn dense_model(seed: u64) -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelGraph::new(
            vec![Layer::Flatten, Layer::dense(3, 1, &mut rng).unwrap()],
            vec![1, 3],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn linear_target_is_learned() {
        let data = linear_dataset(300);
        let model = dense_model(1);
        let initial = dataset_loss(&model, &data).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            validation_fraction: 0.0,
            early_stop_patience: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, history) = train_model(model, &data, &cfg).unwrap();
        let last = *history.train_loss.last().unwrap();
        assert!(last < 0.01 * initial, "{last} vs {initial}");
        assert!(dataset_loss(&trained, &data).unwrap() < 0.01 * initial);
        // Closed-form least-squares weights are (0.6, 0.3, 0) on (a, b, rrp) with bias 0.1.
        let w = trained.params()[0].data().to_vec();
        assert!((w[0] - 0.6).abs() < 0.05 && (w[1] - 0.3).abs() < 0.05, "{w:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = linear_dataset(120);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let (m1, h1) = train_model(dense_model(2), &data, &cfg).unwrap();
        let (m2, h2) = train_model(dense_model(2), &data, &cfg).unwrap();
        assert_eq!(h1.losses_bits(), h2.losses_bits());
        assert_eq!(m1, m2);
    }

    #[test]
    fn restored_parameters_have_best_validation_loss() {
        let data = linear_dataset(200);
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            early_stop_patience: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, history) = train_model(dense_model(5), &data, &cfg).unwrap();
        let best = history.validation_loss[history.best_epoch];
        assert!(history.validation_loss.iter().all(|&l| l >= best));
        let n_val = (data.len() as f64 * 0.1).floor() as usize;
        let val = data.slice(data.len() - n_val, data.len());
        assert_eq!(dataset_loss(&model, &val).unwrap().to_bits(), best.to_bits());
    }

    #[test]
    fn divergence_is_reported() {
        let data = linear_dataset(100);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            optimizer: OptimizerKind::Sgd,
            seed: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_model(dense_model(1), &data, &cfg),
            Err(TrainError::DivergedLoss { .. })
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = linear_dataset(10).slice(0, 0);
        assert!(matches!(
            train_model(dense_model(1), &data, &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let data = linear_dataset(50);
        let frame_scaler = {
            let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
            let f = TimeSeriesFrame::new(
                vec![start, start + Duration::days(1)],
                vec!["rrp".into()],
                vec![vec![20.0, 300.0]],
            )
            .unwrap();
            fit_minmax(&f, 0..2).unwrap()
        };
        let r = evaluate_predictions(data.targets.data(), &data, &frame_scaler, 200.0).unwrap();
        assert_eq!((r.rmse, r.mae, r.accuracy), (0.0, 0.0, 1.0));
        assert_eq!(r.confusion.total() as usize, data.len());
    }

    #[test]
    fn persistence_uses_last_target() {
        let data = linear_dataset(10);
        let p = persistence_predictions(&data);
        assert_eq!(p.len(), data.len());
        assert_eq!(p[3], data.inputs.data()[3 * 3 + 2]);
    }
}
