//! Files, reports and the command-line pipeline around `detnas-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod spacefile;
pub mod stats;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
