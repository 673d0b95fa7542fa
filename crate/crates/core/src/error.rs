use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("self-loop on node '{label}' at line {line}")]
    SelfLoop { label: String, line: usize },
    #[error("non-positive edge weight {weight} at line {line}")]
    NonPositiveWeight { weight: f64, line: usize },
    #[error("duplicate edge ({u}, {v}) at line {line}")]
    DuplicateEdge { u: String, v: String, line: usize },
    #[error("graph is disconnected: {components} components")]
    Disconnected { components: usize },
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("node {node} has no neighbours")]
    IsolatedNode { node: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("signature syntax error at position {pos}: {msg}")]
    SignatureSyntax { pos: usize, msg: String },
    #[error("signature dimensions sum to {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid signature: {0}")]
    InvalidSignature(String),

    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "non-finite gradient at iteration {iteration} in {block} block (max |g| = {max_abs})"
    )]
    NonFiniteGradient {
        iteration: usize,
        block: &'static str,
        max_abs: f64,
    },
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("invalid binary format: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown dataset '{name}' (manifest: {manifest})")]
    UnknownDataset { name: String, manifest: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Numeric = 4,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_kind(&self) -> ExitKind {
        match self {
            Error::SignatureSyntax { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidSignature(_)
            | Error::Config(_)
            | Error::UnknownDataset { .. } => ExitKind::Config,
            Error::ZeroVector
            | Error::LengthMismatch { .. }
            | Error::Domain(_)
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. } => ExitKind::Numeric,
            _ => ExitKind::Data,
        }
    }
}
