use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the motion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },
    #[error("structural error: {0}")]
    Structure(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown template id {0}")]
    UnknownTemplate(String),
    #[error("routing error: unknown word {word:?}; valid words: {valid}")]
    Routing { word: String, valid: String },
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("length error: {0}")]
    Length(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("masks do not form a partition: {0}")]
    Partition(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("bad checkpoint magic in {0}")]
    BadMagic(PathBuf),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint content: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Structure(_) => "structure",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::UnknownTemplate(_) => "unknown_template",
            Error::Routing { .. } => "routing",
            Error::UnknownToken(_) => "unknown_token",
            Error::Length(_) => "length",
            Error::Empty(_) => "empty",
            Error::Partition(_) => "partition",
            Error::Divergence { .. } => "divergence",
            Error::BadMagic(_) => "bad_magic",
            Error::Version { .. } => "version",
            Error::Truncated(_) => "truncated",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
