//! Command-line front end: TOML experiment configs, presets, CSV and
//! manifest output, and self checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_check, cmd_compare, cmd_run, CheckOptions, CheckOutcome, Source, Written};
pub use config::{Config, Overrides};
pub use error::{CliError, Result};
pub use output::{render_csv, RunManifest, CSV_HEADER};
