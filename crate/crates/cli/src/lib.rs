//! Batch runner: configuration, file formats and the four subcommands.

pub mod config;
pub mod io;
pub mod run;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    /// I/O or parse failure, message carries the path and location.
    #[error("{0}")]
    File(String),
    #[error(transparent)]
    Core(#[from] rarpinn::Error),
    /// Training stopped early; artifacts for the completed phases were written.
    #[error("training failed: {0} (partial results in {1})")]
    Failed(rarpinn::Error, String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::File(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::File(_) => 3,
            CliError::Core(_) => 4,
            CliError::Failed(..) => 5,
        }
    }
}
