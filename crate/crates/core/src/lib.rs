//! Quantization-aware machine unlearning.
//!
//! Fake-quantized multilayer perceptrons with straight-through gradients,
//! entropy-guided forgetting, orthogonal gradient projection against the
//! retain objective, the usual unlearning baselines, and the evaluation
//! protocol that compares them with a model retrained without the forget set.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gop;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod quant;
pub mod runner;
pub mod unlearner;

pub use error::{Error, Result};
