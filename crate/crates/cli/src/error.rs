use std::path::PathBuf;

use csi_inpaint_model::ModelError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes; part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const CHECKPOINT: i32 = 5;
    pub const PARTIAL_SWEEP: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Diverged(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("{failed} of {total} sweep points failed: {summary}")]
    PartialSweep {
        failed: usize,
        total: usize,
        summary: String,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Diverged(_) => exit::DIVERGED,
            CliError::Checkpoint(_) => exit::CHECKPOINT,
            CliError::PartialSweep { .. } => exit::PARTIAL_SWEEP,
            CliError::Other(_) => 1,
        }
    }
}

impl From<csi_inpaint_core::Error> for CliError {
    fn from(e: csi_inpaint_core::Error) -> Self {
        use csi_inpaint_core::Error as E;
        match e {
            E::Io { path, source } => CliError::Io { path, source },
            E::Config(_) | E::Json { .. } | E::AllSubcarriersDropped { .. } => CliError::Config(e.to_string()),
            E::Corrupt { .. } | E::ManifestVersion { .. } => CliError::Io {
                path: PathBuf::new(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
            },
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Diverged { .. } => CliError::Diverged(e.to_string()),
            ModelError::Checkpoint { .. } | ModelError::CheckpointMismatch(_) => CliError::Checkpoint(e.to_string()),
            ModelError::Io { path, source } => CliError::Io {
                path: path.into(),
                source,
            },
            ModelError::Data(inner) => inner.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}
