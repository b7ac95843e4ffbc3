//! Configuration loading and the `simulate`, `sweep` and `verify` commands.

pub mod commands;
pub mod config;
pub mod output;
mod verify;

pub use commands::{cmd_simulate, cmd_sweep, cmd_verify, EXIT_ERROR, EXIT_OK, EXIT_UNSAFE, THREADS_ENV};
pub use config::{load_config, parse_config, ConfigError, RunConfig, Scenario};
