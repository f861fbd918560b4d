//! Experiment harness for `mtcae`: TOML configs, leave-one-speaker-out runs,
//! gradient checks and JSON reports. The `mtcae` binary is a thin clap layer
//! over this crate.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod gradcheck;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{run_loso, RunOptions};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use report::{FoldReport, RunReport};
