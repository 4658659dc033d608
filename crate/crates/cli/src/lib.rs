//! Configuration, orchestration and output for chain SDE experiments.
//!
//! Every run writes `summary.json` (configuration echo, checks, results) and
//! `trace.csv` into its output directory, plus `paths/*.bpath` when path
//! dumps are requested. Exit codes: 0 all checks passed, 1 a check failed,
//! 2 configuration or runtime error.

pub mod config;
pub mod run;

pub use config::{Command, ConfigError, ExperimentConfig, Horizon};
pub use run::{exit_code, run, Check, CliError, RunOptions, RunOutcome};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "CHAINSDE_WORKERS";
