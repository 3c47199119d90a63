//! Error classes and their process exit codes.

use std::fmt;

/// 0 success, 1 internal error, 2 I/O, config or argument error, 3 missing
/// artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Internal = 1,
    Config = 2,
    Missing = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Missing,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<avtse::Error> for CliError {
    fn from(e: avtse::Error) -> Self {
        use avtse::Error as E;
        let kind = match &e {
            E::MissingFile(_) => ExitKind::Missing,
            E::Io { .. } | E::InvalidConfig(_) | E::InvalidArgument(_) | E::Malformed { .. } | E::Json(_) => {
                ExitKind::Config
            }
            _ => ExitKind::Internal,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}
