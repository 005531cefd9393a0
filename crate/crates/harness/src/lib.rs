//! Experiment harness: datasets, configuration, sweeps and CSV output for
//! the `qbnn` command-line tool.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod results;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use results::ResultRow;
