//! Command-line front end: configuration files, run orchestration, the
//! gradient self-check and artifact output.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod contour;
pub mod error;
pub mod output;

pub use commands::{cmd_check_gradients, cmd_extract_contour, cmd_optimize};
pub use config::{parse_config, parse_config_str};
pub use error::{CliError, CliResult};
