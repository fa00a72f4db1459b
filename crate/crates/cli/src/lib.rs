//! Command-line front end for `sscgan`: configuration layering and the
//! `train`, `eval`, `generate` and `verify` commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_generate, cmd_train, cmd_verify, CliError, TrainOutcome};
pub use config::{ConfigError, RunConfig, PAPER_REPRO};
