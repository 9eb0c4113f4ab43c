//! Lung-sound classification: cycle extraction, log-mel features, device
//! spectrum correction, augmentation, a ResNet backbone with stochastic
//! normalization, co-tuning and evaluation.

pub mod audio;
pub mod augment;
pub mod backbone;
pub mod config;
pub mod cotuning;
mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod speccorr;
pub mod stochnorm;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
