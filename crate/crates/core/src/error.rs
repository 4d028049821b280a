use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while loading, assembling, solving or exporting a market run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{context} is infeasible ({hint})")]
    Infeasible { context: String, hint: String },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed TOML in {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Topology(_)
            | Error::Schema(_)
            | Error::Shape { .. }
            | Error::Domain(_)
            | Error::Config(_)
            | Error::State(_)
            | Error::Json { .. }
            | Error::Toml { .. } => 2,
            Error::Infeasible { .. } => 3,
            Error::Io { .. } => 4,
            Error::Internal(_) | Error::Solver(_) => 1,
        }
    }
}
