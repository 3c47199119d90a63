use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("signal too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("target has zero variance after mean removal")]
    ZeroVarianceTarget,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("audio/video misaligned: {audio_seconds:.3}s audio vs {video_seconds:.3}s video")]
    Misaligned { audio_seconds: f64, video_seconds: f64 },

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch_ids:?}")]
    NonFiniteLoss { epoch: usize, batch_ids: Vec<String> },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $err:expr) => {
        match $cond {
            true => {}
            false => return Err($err),
        }
    };
}
pub(crate) use ensure;
