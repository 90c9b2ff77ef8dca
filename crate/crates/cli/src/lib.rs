//! Command-line front end: configuration, report serialization and the
//! stage pipeline behind the `hjbc` binary.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{load_config, ConfigError, RunConfig};
pub use pipeline::{Command, Context};
