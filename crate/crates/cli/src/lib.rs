//! Experiment driver for the PIM enclave simulator: configuration files,
//! output formats and the commands behind the `pim-enclave` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod peds;

pub use error::CliError;
