//! Experiment harness for the kinetic mean-field library: configuration,
//! the experiment registry, output bundles and the `kcl` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ExperimentId, Thresholds};
pub use error::{HarnessError, Result};
pub use experiments::{experiment_registry, run_experiment, Experiment, Summary};
