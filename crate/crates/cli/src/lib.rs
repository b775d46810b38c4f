//! Command-line driver: dataset generation, mask generation, training,
//! reconstruction and evaluation reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;
pub mod report;

pub use cli::{run, Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};
