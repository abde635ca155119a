//! Experiment runner for the fedro testbed.

pub mod audit;
pub mod config;
pub mod error;
pub mod pool;
pub mod report;
pub mod sweep;

pub use config::{parse_config, Cell, ExperimentConfig, ExperimentKind};
pub use error::{CliError, ConfigError, Result};
pub use report::{build_report, write_report, Report};
pub use sweep::{run_cells, RunOptions, RunSummary};
