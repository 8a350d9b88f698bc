use std::path::PathBuf;

use thiserror::Error;

/// Pipeline failures, each mapped to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {}: run the `{stage}` stage first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("threshold failure: {0}")]
    Threshold(String),
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error(transparent)]
    Core(#[from] emulink::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Threshold(_) => 4,
            CliError::Checksum(_) => 5,
            CliError::Core(emulink::Error::Config(_)) => 2,
            CliError::Core(emulink::Error::Checksum(_)) => 5,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}
