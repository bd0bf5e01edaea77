//! Commands of the `swm` tool, usable as a library.
//!
//! Each `cmd_*` function reads its inputs, writes its output files and
//! returns the JSON report it wrote (configuration echo included).

pub mod commands;
pub mod config;
pub mod error;

pub use commands::*;
pub use config::RunConfig;
pub use error::CliError;
