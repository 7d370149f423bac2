use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite state at step {step}: {what}")]
    NonFiniteState { step: usize, what: String },

    #[error("episode already finished; call reset() first")]
    EpisodeFinished,

    #[error("Riccati integration blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("schema version mismatch: file has {found}, reader supports {supported}")]
    SchemaVersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),

    #[error("missing report cell: scenario {scenario}, strategy {strategy}")]
    MissingCell { scenario: String, strategy: String },

    #[error("unknown strategy '{name}'; valid names: {valid}")]
    UnknownStrategy { name: String, valid: String },

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("bad checkpoint format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
