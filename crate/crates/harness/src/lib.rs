//! Experiment runner: configs, pool and model files, evaluation and the
//! `mds` command line.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod pipeline;
pub mod pool_io;
pub mod summarize;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
