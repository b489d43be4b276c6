//! Electricity price forecasting with a hybrid convolutional + LSTM network.
//!
//! The crate covers the whole pipeline: CSV ingestion and cleaning
//! ([`data`]), scaling and windowing ([`preprocess`]), a small
//! from-scratch neural-network kernel ([`nn`]), the hybrid model and its
//! RNN/MLP baselines ([`models`]), training ([`training`]), evaluation
//! metrics ([`metrics`]), recursive multi-year forecasting ([`forecast`]) and
//! the end-to-end runner used by the command-line tool ([`pipeline`]).

pub mod config;
pub mod data;
pub mod forecast;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod training;
