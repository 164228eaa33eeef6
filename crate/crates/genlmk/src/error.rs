use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("landmark index {index} out of range for {n_landmarks} landmarks")]
    Index { index: usize, n_landmarks: usize },
    #[error("point {0:?} outside the unit square")]
    Range([f64; 2]),
    #[error("template needs at least 2 landmarks, got {0}")]
    Empty(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("frame id mismatch between tracks: {0}")]
    Align(String),
    #[error("track too short: need at least 2 frames, got {0}")]
    Short(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 3 for data problems, 4 for numeric
    /// failures, 1 otherwise (2 is reserved for usage errors).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 4,
            Error::Parse(_)
            | Error::Index { .. }
            | Error::Range(_)
            | Error::Empty(_)
            | Error::Io { .. }
            | Error::Data(_) => 3,
            _ => 1,
        }
    }
}
