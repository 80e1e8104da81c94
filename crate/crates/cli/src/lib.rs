//! Experiment harness for `lora-phy`: IQ capture files, Monte Carlo BER/SER
//! sweeps and synchronizer benchmarks driven by a TOML config.

pub mod commands;
pub mod config;
mod error;
pub mod experiment;
pub mod iq;
pub mod stats;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use experiment::{ResultRow, SyncBenchRow};
