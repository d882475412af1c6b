//! Workflow commands driven by a single run configuration.

pub mod commands;
pub mod config;

pub use commands::{run, Command, CommandArgs};
pub use config::RunConfig;
