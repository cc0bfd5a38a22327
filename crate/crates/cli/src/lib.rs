//! Experiment driver: config files, end-to-end runs and figure data.

pub mod config;
pub mod error;
pub mod experiments;
pub mod figures;

pub use config::{builtin_config, ExperimentConfig, ExperimentKind, Resolved};
pub use error::{CliError, CliResult};
pub use experiments::{run_experiment, Summary};
pub use figures::{emit_figure_data, ResultSet};
