//! Command-line pipeline: config loading, the internal corpus format and
//! subcommand execution.

pub mod commands;
pub mod config;
pub mod corpus;

pub use commands::{execute, threads_from_env, CliError, Command, Options};
pub use config::{load_config, ConfigError, RunConfig};
