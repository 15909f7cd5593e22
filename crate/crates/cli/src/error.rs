use std::path::{Path, PathBuf};

use mvdet::pipeline::PipelineError;
use mvdet::simworld::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Invariant(_) => "invariant",
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::PlacementFailure { .. } | SimError::FrameOutOfRange { .. } => {
                CliError::Config(e.to_string())
            }
            SimError::Geometry(_) => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => CliError::Config(e.to_string()),
            PipelineError::Sim(s) => s.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}
