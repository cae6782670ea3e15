//! File formats, run configuration and the `gen-data` / `train` / `sample` /
//! `eval` commands built on `thzgen-core`.

pub mod commands;
pub mod config;
pub mod format;

pub use commands::{CommandError, Metric};
pub use config::{ConfigError, RunConfig};
pub use format::{Checkpoint, CheckpointMeta, FormatError};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "THZGEN_THREADS";
