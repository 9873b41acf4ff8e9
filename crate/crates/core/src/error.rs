use thiserror::Error;

use crate::groups::GroupKind;

/// Errors produced by the torsor library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TorsorError {
    #[error("group kind mismatch: expected {expected}, found {found}")]
    GroupKindMismatch { expected: GroupKind, found: GroupKind },

    #[error("invalid group element: {0}")]
    InvalidElement(String),

    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("({u}, {v}) is not an edge")]
    NotAnEdge { u: usize, v: usize },

    #[error("not a cycle: {0}")]
    NotACycle(String),

    #[error("graphs do not share the same topology: {0}")]
    TopologyMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("graph is disconnected")]
    Disconnected,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("search space too large: {size} states exceeds limit {limit}")]
    TooLarge { size: f64, limit: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("matrix is not an intertwiner (residual {residual:e})")]
    NotAnIntertwiner { residual: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, history: Vec<f64> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, TorsorError>;
