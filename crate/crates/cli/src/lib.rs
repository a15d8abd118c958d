//! Command-line front end: run configuration, orchestration and CSV output.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, MeshSource, Mode, RunConfig};
pub use run::{history_csv, levels_csv, run, table_csv, RunError, RunOutput, HISTORY_HEADER};
