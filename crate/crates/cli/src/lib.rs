//! Command-line driver for `fracflow`: configuration files, single runs,
//! width sweeps and the invariant check suite.

pub mod commands;
pub mod config;

pub use commands::{cmd_check, cmd_run, cmd_sweep, load, CliError, Model, RunOptions, SweepOptions};
pub use config::{parse_config, parse_str, ConfigError, FileConfig};
