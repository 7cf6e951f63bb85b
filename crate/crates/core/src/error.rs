use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus too small: need at least {needed} records, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("invalid corpus record at line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("unknown pair id {0}")]
    UnknownPairId(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cached activations do not match the stack: {0}")]
    StaleCache(String),
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("checkpoint format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("class {label} has {got} examples, need at least {needed}")]
    ClassUnderrepresented { label: String, got: usize, needed: usize },
    #[error("lexicon missing or empty: {0}")]
    LexiconMissing(PathBuf),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("engine not ready: {0}")]
    EngineNotReady(String),
    #[error("{path}: {source}")]
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
}
