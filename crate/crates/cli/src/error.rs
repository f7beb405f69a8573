use std::process::ExitCode;

use thiserror::Error;

use vidpipe_core::loader::LoaderError;
use vidpipe_core::perf::ModelError;
use vidpipe_core::units::UnitError;
use vidpipe_core::{ChunkError, RrcError};
use vidpipe_media::MediaError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or request.
    #[error("{0}")]
    Config(String),
    /// Unreadable or corrupt media, or a failed decode.
    #[error("{0}")]
    Data(String),
    /// The inputs admit no solution, e.g. no batch fits in memory.
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
        })
    }

    pub fn io(what: &str, e: std::io::Error) -> Self {
        CliError::Data(format!("{what}: {e}"))
    }
}

impl From<MediaError> for CliError {
    fn from(e: MediaError) -> Self {
        match e {
            MediaError::Input(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LoaderError> for CliError {
    fn from(e: LoaderError) -> Self {
        match e {
            LoaderError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ChunkError> for CliError {
    fn from(e: ChunkError) -> Self {
        match e {
            ChunkError::Manifest { .. } | ChunkError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RrcError> for CliError {
    fn from(e: RrcError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<UnitError> for CliError {
    fn from(e: UnitError) -> Self {
        CliError::Config(e.to_string())
    }
}
