//! Command-line pipeline and local prediction service built on `bugloc-core`.

pub mod artifacts;
pub mod benchmark;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod predict;
pub mod serve;
pub mod synth;

pub use cli::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
