use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_CERTIFICATION: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] probshield::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("config {path}: {source}")]
    Config {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use probshield::Error as E;
        match self {
            CliError::Core(E::Infeasible { .. }) => EXIT_INFEASIBLE,
            CliError::Core(E::NotConverged { .. } | E::NotInductive) => EXIT_CERTIFICATION,
            CliError::Verification(_) => EXIT_CERTIFICATION,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
