//! Configuration and subcommands of the `basset` binary.

pub mod commands;
pub mod config;

pub use commands::{run, CliError, Command, Outcome};
pub use config::{parse_config, render, ConfigError, RunConfig};
