//! Batch orchestration of the acquisition, selection, and generation phases.

pub mod config;
pub mod error;
pub mod manifest;
pub mod phases;
pub mod plot;
pub mod table;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
pub use phases::{run_phase, run_pipeline, Phase};
