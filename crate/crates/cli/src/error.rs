use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Sync failure, uncorrectable payload or CRC mismatch.
    #[error("decode: {0}")]
    Decode(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 decode, 2 config, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Decode(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

/// Library errors raised while setting up an experiment are config errors.
impl From<lora_phy::Error> for CliError {
    fn from(e: lora_phy::Error) -> Self {
        match e {
            lora_phy::Error::Sync { .. } => CliError::Decode(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
