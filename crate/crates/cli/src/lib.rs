//! Batch frontend for `petbd`: configuration, PGRID file I/O and the
//! experiment commands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
