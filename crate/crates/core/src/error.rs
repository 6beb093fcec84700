use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("empty atom at line {0}")]
    EmptyAtom(usize),

    #[error("empty atom in {0}")]
    EmptyParagraph(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown category {0}")]
    UnknownCategory(String),

    #[error("dimension mismatch line {0}")]
    DimensionMismatch(usize),

    #[error("duplicate word {word:?} at line {line}")]
    DuplicateWord { word: String, line: usize },

    #[error("unembeddable atom {0}: no in-vocabulary tokens")]
    Unembeddable(u64),

    #[error("level exceeds atom length: level {level} for {tokens} tokens")]
    LevelExceedsLength { level: usize, tokens: usize },

    #[error("requested {requested} components but achievable rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
