//! Error types shared across the engine.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a documented invariant (schema, dataset, tree, config).
    #[error("validation error: {0}")]
    Validation(String),

    /// A record in a line-oriented file could not be read.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    /// A gateway or selector backend failed (transport, HTTP status, missing script entry).
    #[error("backend error: {0}")]
    Backend(String),

    /// The backend lacks a capability the operation needs (token probabilities, option scores).
    #[error("capability error: {0}")]
    Capability(String),

    /// Structured LLM output stayed unparseable after every repair attempt.
    #[error("{message} (after {attempts} attempts); last response: {raw:?}")]
    RepairExhausted {
        message: String,
        attempts: usize,
        raw: String,
    },

    /// Error raised while building a specific tree node.
    #[error("at node '{path}': {source}")]
    AtNode {
        path: String,
        #[source]
        source: Box<Error>,
    },

    /// Error raised while classifying one instance.
    #[error("instance '{id}': {source}")]
    AtInstance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        Error::Backend(msg.into())
    }

    pub fn at_node(path: impl Into<String>, source: Error) -> Self {
        Error::AtNode {
            path: path.into(),
            source: Box::new(source),
        }
    }

    pub fn at_instance(id: impl Into<String>, source: Error) -> Self {
        Error::AtInstance {
            id: id.into(),
            source: Box::new(source),
        }
    }

    /// The innermost error once node/instance context is stripped.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtNode { source, .. } | Error::AtInstance { source, .. } => source.root_cause(),
            other => other,
        }
    }

    /// Process exit code: 2 validation, 3 backend, 4 parse/repair exhaustion.
    pub fn exit_code(&self) -> i32 {
        match self.root_cause() {
            Error::Validation(_) | Error::Line { .. } | Error::Json(_) => 2,
            Error::Backend(_) | Error::Capability(_) | Error::Io(_) => 3,
            Error::RepairExhausted { .. } => 4,
            Error::AtNode { .. } | Error::AtInstance { .. } => unreachable!(),
        }
    }
}
