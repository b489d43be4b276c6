//! Builders for the hybrid convolutional + LSTM network and its two
//! baselines (Elman RNN and a flat MLP).
//!
//! The convolutional front end is a one-dimensional AlexNet-style stack:
//! repeated conv → ReLU → max-pool blocks sliding along the time axis, with
//! the input features as channels. Its reduced sequence feeds an LSTM whose
//! last hidden state goes through dropout and a dense head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{conv_output_len, Layer, ModelGraph, NnError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("temporal axis exhausted: {0}")]
    ShapeUnderflow(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub window: usize,
    pub n_features: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub lstm_hidden: usize,
    /// Hidden dense sizes followed by the output size, which must equal `horizon`.
    pub dense_head: Vec<usize>,
    pub dropout_rate: f64,
    pub horizon: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            window: 30,
            n_features: 12,
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 16,
                    kernel: 3,
                    pool: 2,
                },
                ConvBlock {
                    out_channels: 32,
                    kernel: 3,
                    pool: 2,
                },
            ],
            lstm_hidden: 64,
            dense_head: vec![32, 1],
            dropout_rate: 0.2,
            horizon: 1,
        }
    }
}

impl HybridConfig {
    /// `(length, channels)` of the sequence handed to the LSTM.
    pub fn reduced_sequence(&self) -> Result<(usize, usize)> {
        let mut len = self.window;
        let mut channels = self.n_features;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            len = conv_output_len(len, b.kernel, 1)
                .ok_or_else(|| ModelError::ShapeUnderflow(format!("block {i}: length {len} < kernel {}", b.kernel)))?;
            len = conv_output_len(len, b.pool, b.pool)
                .ok_or_else(|| ModelError::ShapeUnderflow(format!("block {i}: length {len} < pool {}", b.pool)))?;
            channels = b.out_channels;
        }
        Ok((len, channels))
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.n_features == 0 || self.lstm_hidden == 0 || self.horizon == 0 {
            return Err(ModelError::InvalidConfig(
                "window, n_features, lstm_hidden and horizon must be ≥ 1".into(),
            ));
        }
        if self
            .conv_blocks
            .iter()
            .any(|b| b.out_channels == 0 || b.kernel == 0 || b.pool == 0)
        {
            return Err(ModelError::InvalidConfig("conv block sizes must be ≥ 1".into()));
        }
        match self.dense_head.last() {
            Some(&last) if last == self.horizon => {}
            _ => {
                return Err(ModelError::InvalidConfig(format!(
                    "dense head {:?} must end with the horizon {}",
                    self.dense_head, self.horizon
                )))
            }
        }
        if self.dense_head.contains(&0) {
            return Err(ModelError::InvalidConfig("dense sizes must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn push_head(layers: &mut Vec<Layer>, mut width: usize, sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<()> {
    for (i, &size) in sizes.iter().enumerate() {
        layers.push(Layer::dense(width, size, rng)?);
        if i + 1 < sizes.len() {
            layers.push(Layer::Relu);
        }
        width = size;
    }
    Ok(())
}

/// conv blocks → LSTM (last hidden state) → dropout → dense head.
pub fn build_hybrid(config: &HybridConfig, seed: u64) -> Result<ModelGraph> {
    config.validate()?;
    config.reduced_sequence()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = config.n_features;
    for b in &config.conv_blocks {
        layers.push(Layer::conv1d(channels, b.out_channels, b.kernel, 1, &mut rng)?);
        layers.push(Layer::Relu);
        layers.push(Layer::maxpool1d(b.pool, b.pool)?);
        channels = b.out_channels;
    }
    layers.push(Layer::lstm(channels, config.lstm_hidden, &mut rng)?);
    layers.push(Layer::dropout(config.dropout_rate)?);
    push_head(&mut layers, config.lstm_hidden, &config.dense_head, &mut rng)?;
    Ok(ModelGraph::new(layers, vec![config.window, config.n_features], seed)?)
}

/// Elman recurrence over the window, last hidden state → dense head.
pub fn build_rnn(window: usize, n_features: usize, hidden: usize, horizon: usize, seed: u64) -> Result<ModelGraph> {
    if hidden == 0 || horizon == 0 || window == 0 || n_features == 0 {
        return Err(ModelError::InvalidConfig("rnn sizes must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        Layer::rnn(n_features, hidden, &mut rng)?,
        Layer::dense(hidden, horizon, &mut rng)?,
    ];
    Ok(ModelGraph::new(layers, vec![window, n_features], seed)?)
}

/// Flatten `window × features` → dense+ReLU stack → dense head.
pub fn build_ann(
    window: usize,
    n_features: usize,
    hidden_sizes: &[usize],
    horizon: usize,
    seed: u64,
) -> Result<ModelGraph> {
    if hidden_sizes.is_empty() {
        return Err(ModelError::InvalidConfig("ann needs at least one hidden layer".into()));
    }
    if hidden_sizes.contains(&0) || horizon == 0 || window == 0 || n_features == 0 {
        return Err(ModelError::InvalidConfig("ann sizes must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::Flatten];
    let mut sizes = hidden_sizes.to_vec();
    sizes.push(horizon);
    push_head(&mut layers, window * n_features, &sizes, &mut rng)?;
    Ok(ModelGraph::new(layers, vec![window, n_features], seed)?)
}

/// Which architecture a run trains, with its architecture-specific sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Hybrid,
    Rnn,
    Ann,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Hybrid, ModelKind::Rnn, ModelKind::Ann];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "LSTM+ALEXNET",
            ModelKind::Rnn => "RNN",
            ModelKind::Ann => "ANN",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Rnn => "rnn",
            ModelKind::Ann => "ann",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(ModelKind::Hybrid),
            "rnn" => Ok(ModelKind::Rnn),
            "ann" => Ok(ModelKind::Ann),
            other => Err(ModelError::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture settings for all three kinds; `window`, `n_features` and
/// `horizon` come from the data pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub conv_blocks: Vec<ConvBlock>,
    pub lstm_hidden: usize,
    pub dense_head_hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub rnn_hidden: usize,
    pub ann_hidden: Vec<usize>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let hybrid = HybridConfig::default();
        Self {
            conv_blocks: hybrid.conv_blocks,
            lstm_hidden: hybrid.lstm_hidden,
            dense_head_hidden: vec![32],
            dropout_rate: hybrid.dropout_rate,
            rnn_hidden: 64,
            ann_hidden: vec![64],
        }
    }
}

impl ArchitectureConfig {
    pub fn hybrid_config(&self, window: usize, n_features: usize, horizon: usize) -> HybridConfig {
        let mut dense_head = self.dense_head_hidden.clone();
        dense_head.push(horizon);
        HybridConfig {
            window,
            n_features,
            conv_blocks: self.conv_blocks.clone(),
            lstm_hidden: self.lstm_hidden,
            dense_head,
            dropout_rate: self.dropout_rate,
            horizon,
        }
    }

    pub fn build(
        &self,
        kind: ModelKind,
        window: usize,
        n_features: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<ModelGraph> {
        match kind {
            ModelKind::Hybrid => build_hybrid(&self.hybrid_config(window, n_features, horizon), seed),
            ModelKind::Rnn => build_rnn(window, n_features, self.rnn_hidden, horizon, seed),
            ModelKind::Ann => build_ann(window, n_features, &self.ann_hidden, horizon, seed),
        }
    }
}
