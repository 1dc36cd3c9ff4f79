//! Command-line front end: simulation, contamination sweeps, evaluation of
//! trajectory, depth and point-cloud files, gradient checks and replays.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod sweep;

pub use commands::{execute, rerun, run, Invocation, RunOutput};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;
