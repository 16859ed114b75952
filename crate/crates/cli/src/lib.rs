//! Experiment driver for the S-VOTE engine: config files, runs, comparisons.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;

pub use compare::compare;
pub use config::{parse_config, parse_config_str, ExperimentConfig, Method};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, Summary};
