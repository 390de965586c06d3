use std::path::PathBuf;

use thiserror::Error;

use crate::cache::CacheKey;
use crate::model::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("cache miss for {} key(s): {}", keys.len(), format_keys(keys))]
    CacheMiss { keys: Vec<CacheKey> },

    #[error("consistency violation: {0}")]
    Consistency(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged in epoch {epoch}; last good checkpoint retained")]
    Diverged {
        epoch: usize,
        last_good: Box<Checkpoint>,
    },

    #[error("question {0} is missing from a ranked list set")]
    Coverage(String),

    #[error("{}:{line}: {message}", path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("provenance mismatch: expected config hash {expected}, found {found} in {artifact}")]
    Provenance {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
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
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

fn format_keys(keys: &[CacheKey]) -> String {
    keys.iter()
        .map(|k| format!("{}@{:016x}", k.doc_id, k.model_hash))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Attaches a stage name to the error of a fallible pipeline step.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
