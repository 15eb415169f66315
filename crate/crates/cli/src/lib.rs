//! Experiment runner for the shk toolkit: TOML configs, pipelines, CSV/SVG/JSON
//! output and the built-in acceptance suites.

pub mod config;
pub mod emit;
mod error;
pub mod experiments;
pub mod report;
pub mod verify;

pub use error::CliError;
