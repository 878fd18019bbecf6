use std::io;
use std::path::PathBuf;

use serde::Serialize;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: unsupported {kind} version {version}")]
    UnsupportedVersion {
        path: PathBuf,
        kind: &'static str,
        version: u8,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numeric(#[from] rompca_core::Error),
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        use rompca_core::Error as E;
        match self {
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::UnsupportedVersion { .. } => "version",
            CliError::Usage(_) => "usage",
            CliError::Numeric(e) => match e {
                E::ShapeMismatch { .. }
                | E::InvalidShape(_)
                | E::LengthMismatch { .. }
                | E::ModeOutOfRange { .. }
                | E::RankOutOfRange { .. }
                | E::InvalidConfig(_)
                | E::EmptySample(_)
                | E::UnobservedCell(_)
                | E::Empty(_)
                | E::IndexOutOfRange { .. } => "validation",
                _ => "numeric",
            },
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "io" | "numeric" | "runtime" => EXIT_FAILURE,
            _ => EXIT_USAGE,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
            exit_code: i32,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                message: self.to_string(),
                exit_code: self.exit_code(),
            },
        })
        .expect("serializable error")
    }
}
