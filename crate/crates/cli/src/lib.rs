//! IO companion for the dynback core: dataset loading and preparation,
//! checkpoint files, experiment configs, reports, and the CLI commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod loaders;
pub mod reports;
pub mod rundir;

/// Schema version stamped into every file this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable consulted when --dataset-root is not given.
pub const DATA_ROOT_ENV: &str = "DYNBACK_DATA_ROOT";
