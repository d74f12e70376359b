//! Experiment harness: configs, training runs, CSV metrics and bound suites.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod suite;
mod error;

pub use error::{BenchError, ConfigError, Result};
