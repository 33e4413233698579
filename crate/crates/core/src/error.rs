use std::path::PathBuf;

use thiserror::Error;

/// Failures at the black-box query boundary.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    /// Timeouts and transport failures; safe to retry.
    #[error("retryable oracle failure: {0}")]
    Retryable(String),
    /// The reply did not follow the wire schema.
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    /// Non-2xx status from the remote side.
    #[error("oracle returned HTTP {status}: {body}")]
    Remote { status: u16, body: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    /// Oracle failure raised while evaluating one EoT sample of one candidate.
    #[error("objective failed at iteration {iteration}, candidate {candidate}, sample {sample}: {source}")]
    Objective {
        iteration: usize,
        candidate: usize,
        sample: usize,
        #[source]
        source: OracleError,
    },

    #[error("manifest entry {entry}: {problem}")]
    Manifest {
        entry: usize,
        problem: crate::scenario::ManifestProblem,
    },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("image error: {0}")]
    Image(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
