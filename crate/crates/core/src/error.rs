use std::path::PathBuf;

use thiserror::Error;

/// Unordered site pair, always stored with the smaller index first.
pub type Edge = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid instance at ({i},{j}): {reason}")]
    InvalidInstance { i: usize, j: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("infeasible partition: sites {0} and {1} share a cluster at distance >= threshold")]
    Infeasible(usize, usize),

    #[error("instance size {n} exceeds limit {cap}")]
    SizeLimit { n: usize, cap: usize },

    #[error("edge ({}, {}) is not available", .0.0, .0.1)]
    IllegalAction(Edge),

    #[error("replay failed at position {position}: edge ({}, {}) is not available", .edge.0, .edge.1)]
    Replay { position: usize, edge: Edge },

    #[error("no legal action: state is terminal")]
    NoAction,

    #[error("policy returned edge ({}, {}) which is not legal", .0.0, .0.1)]
    ContractViolation(Edge),

    #[error("optimality gap undefined: reference {reference}, candidate {candidate}")]
    UndefinedGap { candidate: f64, reference: f64 },

    #[error("candidate {candidate} is below reference {reference}")]
    BelowReference { candidate: f64, reference: f64 },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss in batch {batch}, minibatch {minibatch}")]
    NonFiniteLoss { batch: usize, minibatch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty report")]
    EmptyReport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Normalizes a pair so the smaller index comes first.
pub fn edge(a: usize, b: usize) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
