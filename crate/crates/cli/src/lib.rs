//! Config-driven experiments around the `pftvp-core` filters: synthetic
//! dataset generation, filter runs, replicate studies and comparison tables.

pub mod commands;
pub mod config;
pub mod presets;
pub mod records;
pub mod summary;
pub mod table;

use pftvp_core::datagen::DataError;
use pftvp_core::filters::FilterError;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PFTVP_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("filter failure: {0}")]
    Filter(#[from] FilterError),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for bad input, 3 for failures while filtering or integrating the
    /// truth, 1 for file system problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(DataError::Integration(_)) => 3,
            CliError::Data(DataError::Io(_)) => 1,
            CliError::Data(_) => 2,
            CliError::Filter(FilterError::Config(_)) => 2,
            CliError::Filter(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}
