//! Library side of the `attn-agent` binary: the run configuration file and
//! the subcommands.

pub mod commands;
pub mod config;

pub use commands::{exit_code, run, Cli, Command, UsageError};
pub use config::{ConfigError, Precision, RunConfig, SCHEMA_VERSION};
