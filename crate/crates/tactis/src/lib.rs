//! File formats and the command line around `tactis-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod io;

pub use error::CliError;
