use std::path::PathBuf;

use tconv_core::data::DataError;
use tconv_core::frontend::FrontendError;
use tconv_core::interpret::InterpretError;
use tconv_core::model::ModelError;
use tconv_core::signal::SignalError;
use tconv_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: expected mono audio, found {channels} channels", path.display())]
    NotMono { path: PathBuf, channels: u16 },
    #[error("{}: unsupported WAV format ({bits}-bit {format}); use 16-bit PCM or 32-bit float", path.display())]
    UnsupportedWav {
        path: PathBuf,
        bits: u16,
        format: &'static str,
    },
    #[error("{}, line {line}: {message}", file.display())]
    Row {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn exit_status(&self) -> ExitStatus {
        match self {
            Error::Config(_) | Error::Frontend(_) => ExitStatus::Config,
            Error::Model(e) => model_status(e),
            Error::Train(e) => match e {
                TrainError::NonFinite { .. } => ExitStatus::Numeric,
                TrainError::BatchTooSmall { .. }
                | TrainError::InvalidConfig(_)
                | TrainError::ReferenceDomain(_) => ExitStatus::Config,
                TrainError::Model(e) => model_status(e),
                TrainError::Frontend(_) => ExitStatus::Config,
                _ => ExitStatus::Data,
            },
            Error::Interpret(InterpretError::NotGammatone(_)) => ExitStatus::Config,
            Error::Interpret(InterpretError::Model(e)) => model_status(e),
            _ => ExitStatus::Data,
        }
    }
}

fn model_status(e: &ModelError) -> ExitStatus {
    match e {
        ModelError::InvalidConfig(_) | ModelError::ConfigMismatch | ModelError::Frontend(_) => {
            ExitStatus::Config
        }
        ModelError::NonFinite => ExitStatus::Numeric,
        _ => ExitStatus::Data,
    }
}
