//! Batch front end: parse a [`RunConfig`], dispatch to the core modules and
//! render a deterministic report.

pub mod commands;
pub mod config;
pub mod suites;

pub use commands::{run, Outcome};
pub use config::{parse_config, ParseOutcome, RunConfig, UsageError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
