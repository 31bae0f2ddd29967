//! Learned spike encoding of complex radar windows: synthetic data, the
//! temporal-contrast baselines, the encoder/decoder/SNN model, training and
//! evaluation.

pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod signal;
pub mod spectrum;
pub mod spikes;
pub mod train;

pub use error::{LseError, Result};
