use thiserror::Error;

/// Errors raised by lattice math, training and experiment code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite logit {value} at cell (t={t}, u={u}, k={k})")]
    NonFiniteLogit { t: usize, u: usize, k: usize, value: f64 },

    #[error("NaN log-probability at cell (t={t}, u={u}, k={k})")]
    NanLogProb { t: usize, u: usize, k: usize },

    #[error("dimension mismatch: expected (T={expected_t}, U={expected_u}), got (T={actual_t}, U={actual_u})")]
    DimensionMismatch {
        expected_t: usize,
        expected_u: usize,
        actual_t: usize,
        actual_u: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("empty label sequence: no tokens to condition on")]
    EmptyLabels,

    #[error("prefix has zero probability at u={u}")]
    ZeroPrefix { u: usize },

    #[error("label sequence has zero probability under the lattice")]
    ZeroProbability,

    #[error("invalid confidence {value} at position {index}; confidences must lie in (0, 1]")]
    InvalidConfidence { index: usize, value: f64 },

    #[error("empty normalization scope")]
    EmptyScope,

    #[error("weights misaligned: {weights} weights for {tokens} tokens")]
    MisalignedWeights { weights: usize, tokens: usize },

    #[error("enumeration guard exceeded: {paths} paths > limit {limit}")]
    GuardExceeded { paths: u128, limit: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("empty reference")]
    EmptyReference,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Coarse classification used by the command-line front end to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFiniteLogit { .. }
            | Error::NanLogProb { .. }
            | Error::ZeroPrefix { .. }
            | Error::ZeroProbability
            | Error::NonFiniteGradient { .. }
            | Error::Diverged(_) => ErrorKind::Numerical,
            Error::InvalidArgument(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}
