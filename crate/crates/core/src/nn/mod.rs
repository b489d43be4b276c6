//! Deterministic 64-bit neural-network kernel.
//!
//! Layers are plain data; [`ModelGraph`] sequences them and owns the
//! forward/backward bookkeeping. There is no autodiff: every layer has a
//! hand-written backward pass, verified against central differences by
//! [`gradient_check`].

mod gradcheck;
mod graph;
pub mod layers;
mod loss;
mod serialize;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{ForwardCache, Gradients, ModelGraph};
pub use layers::{
    conv1d_forward, conv_output_len, dense_forward, dropout, lstm_step, maxpool1d_forward, relu, Layer, LayerKind, Mode,
};
pub use loss::mse_loss;
pub use serialize::{ModelDocument, MODEL_FORMAT};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temporal axis exhausted: {0}")]
    ShapeUnderflow(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("two identical forward passes disagree")]
    NonDeterministicForward,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
