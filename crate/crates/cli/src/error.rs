use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact {}: {hint}", path.display())]
    ArtifactMissing { path: PathBuf, hint: &'static str },
    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    ArtifactExists(PathBuf),
    #[error("i/o failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ArtifactExists(_) => 1,
            CliError::Config(_) => 2,
            CliError::ArtifactMissing { .. } => 3,
            CliError::IoFailure { .. } | CliError::Runtime(_) => 4,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}
