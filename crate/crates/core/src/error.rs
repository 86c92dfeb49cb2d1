use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}:{column}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("duplicate {kind} id {id}")]
    Uniqueness { kind: &'static str, id: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("unknown {kind} id {id}")]
    Lookup { kind: &'static str, id: u64 },

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{model} diverged at epoch {epoch}")]
    Divergence { model: &'static str, epoch: usize },

    #[error("empty catalog")]
    EmptyCatalog,

    #[error("aggregation received no participant updates")]
    NoParticipants,

    #[error("rejected update from client {client}: non-finite parameter")]
    RejectedUpdate { client: u64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no user qualifies for evaluation")]
    EmptyEvaluation,

    #[error("incomparable reports: {0}")]
    IncomparableReports(String),

    #[error("privacy violation in round {round}: {reason}")]
    PrivacyViolation { round: usize, reason: String },

    #[error("{module}: {source}")]
    Context {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error with module contexts peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, module: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, module: &'static str) -> Result<T> {
        self.map_err(|e| Error::Context {
            module,
            source: Box::new(e),
        })
    }
}
