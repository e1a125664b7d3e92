//! Command implementations behind the `false-al` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod results;

pub use commands::{build_report, cmd_generate, cmd_report, cmd_run, Report, RunOptions, RunSummary};
