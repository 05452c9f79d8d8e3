//! Library side of the `softprop` command-line tool.

pub mod commands;
pub mod config;
mod error;

pub use config::{Overrides, RunConfig, RUN_CONFIG_VERSION};
pub use error::{usage, CliError, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

/// Worker threads for evaluation, from `SOFTPROP_THREADS` (default 1).
pub fn threads_from_env() -> usize {
    std::env::var("SOFTPROP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
