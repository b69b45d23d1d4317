//! Experiment harness for the crossbar simulator: dataset loaders, TOML
//! configuration, pipeline orchestration and report emission.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{HarnessError, Result};
