use std::fmt;

/// Why a cell failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    Disconnected,
    TooManyEdges,
    TooManyNodes,
    NotUpperTriangular,
    Malformed,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InvalidReason::Disconnected => "no input-to-output path",
            InvalidReason::TooManyEdges => "too many edges",
            InvalidReason::TooManyNodes => "too many nodes",
            InvalidReason::NotUpperTriangular => "adjacency is not strictly upper-triangular",
            InvalidReason::Malformed => "malformed cell description",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid cell: {reason}")]
    InvalidCell { reason: InvalidReason },
    #[error("requested {requested} unique architectures but the space only holds {available}")]
    SpaceExhausted { requested: usize, available: usize },
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("architecture {0} is not in the configured search space")]
    NotInSpace(String),
    #[error("architecture {0} is not in the benchmark table")]
    UnknownArchitecture(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("statistics undefined: {0}")]
    Undefined(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(reason: InvalidReason) -> Self {
        Error::InvalidCell { reason }
    }
}
