//! Configuration-driven experiment runner for `grinlab`: trains the base
//! model, executes unlearning runs and sweeps, and writes comparison tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;
pub mod sweep;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{CliError, Result};

/// Worker count from `GRINLAB_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("GRINLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
