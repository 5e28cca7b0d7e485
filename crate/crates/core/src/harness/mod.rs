//! Experiment runner: configuration, training with checkpoint metrics,
//! result files and self-checks.

pub mod config;
pub mod output;
pub mod plot;
pub mod run;
pub mod selftest;
pub mod stats;

pub use config::ExperimentConfig;
pub use output::emit_results;
pub use run::{run_experiment, run_pair_regularization, CheckpointMetrics, RunError, RunResult};
