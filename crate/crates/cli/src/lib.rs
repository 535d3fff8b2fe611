//! Config-driven front end: experiment files, pipelines and plots.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod render;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{run, run_file, run_to_file, Check, Mode, RunOptions, RunOutcome};
