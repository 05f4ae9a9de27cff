use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate extent")]
    DegenerateExtent,

    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("behind camera: depth {0}")]
    BehindCamera(f64),

    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),

    #[error("count mismatch: expected {expected}, got {actual}")]
    CountMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("no occupied memory slots")]
    EmptyMemory,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: byte offset {offset}: {message}")]
    Format {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("partial view is empty after {0} attempts")]
    EmptyPartial(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used in CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyCloud | Error::DegenerateExtent | Error::EmptyPartial(_) => "INPUT",
            Error::InvalidRig(_) | Error::InvalidParameter(_) => "CONFIG",
            Error::BehindCamera(_) | Error::NonPositiveDepth(_) => "GEOMETRY",
            Error::CountMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::IndexOutOfRange { .. }
            | Error::EmptyMemory => "SHAPE",
            Error::NonFinite(_) => "NUMERIC",
            Error::Parse { .. } | Error::Format { .. } => "PARSE",
            Error::Checkpoint(_) => "CHECKPOINT",
            Error::Io { .. } => "IO",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "IO" => 2,
            "PARSE" => 3,
            "CONFIG" => 4,
            "INPUT" => 5,
            "NUMERIC" => 6,
            "CHECKPOINT" => 7,
            _ => 1,
        }
    }
}
