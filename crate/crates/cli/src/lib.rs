//! Configuration-driven front end: loads an experiment config, applies
//! command-line overrides, runs one mode and writes CSV/JSON results.

pub mod config;
pub mod error;
pub mod modes;
pub mod output;

pub use config::{parse_time_grid, ExperimentConfig, Mode, Overrides};
pub use error::{CliError, Result};
pub use modes::{run, Report};
