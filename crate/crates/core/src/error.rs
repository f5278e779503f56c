use thiserror::Error;

use crate::autodiff::GraphError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("sequence of {len} tokens exceeds max length {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown relation id {0}")]
    UnknownRelationId(usize),
    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: unknown relation `{name}`")]
    UnknownRelation {
        path: String,
        line: usize,
        name: String,
    },
    #[error("entity `{0}` not found in sentence tokens")]
    UnlocatableEntity(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("infeasible synthetic corpus: {0}")]
    Infeasible(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
