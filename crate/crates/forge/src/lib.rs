//! File formats, experiment configuration and the `lda-forge` commands on
//! top of `lda-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use config::{ExperimentConfig, Overrides};
pub use error::{ForgeError, Result};
