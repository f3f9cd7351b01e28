use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("vertex {0} has zero degree; normalized Laplacian undefined")]
    ZeroDegreeVertex(usize),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("product graph would have {size} vertices, above the limit {limit}")]
    SizeOverflow { size: usize, limit: usize },

    #[error("points {0} and {1} coincide")]
    DuplicatePoints(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("{0} needs an explicit seed")]
    MissingSeed(&'static str),

    #[error("combined support of {size} points exceeds exact-solver cap {cap}; use the Sinkhorn solver")]
    SupportTooLarge { size: usize, cap: usize },

    #[error("{what} did not converge (final residual {residual:e})")]
    NotConverged { what: &'static str, residual: f64 },

    #[error("mixture component weight {weight:e} fell below 1/(10N)")]
    DegenerateComponent { weight: f64 },

    #[error("operation requires a constant signal-adaptive graph structure")]
    NotConstantSags,

    #[error("filter evaluation failed: {0}")]
    FilterEvaluationFailed(Box<Error>),

    #[error("selected rows are rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("{} candidate subspaces fit the observations: {:?}", .0.len(), .0)]
    Ambiguous(Vec<usize>),

    #[error("no candidate subspace fits the observations")]
    NoMatch,

    #[error("normal equations are singular")]
    SingularNormalEquations,

    #[error("class {0} has no training signals")]
    EmptyClass(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::DegenerateComponent { .. }
            | Error::RankDeficient(_)
            | Error::SingularNormalEquations
            | Error::NotPsd(_)
            | Error::Ambiguous(_)
            | Error::NoMatch => true,
            Error::FilterEvaluationFailed(inner) => inner.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
