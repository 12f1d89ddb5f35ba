use thiserror::Error;

/// Errors raised by the game and dynamics operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{n} users exceeds the coalition enumeration limit of {max}")]
    TooManyUsers { n: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("user {user} is not a member of coalition {coalition:#b}")]
    NotInCoalition { user: usize, coalition: u32 },

    #[error("no feasible completion for user {user}: the other users already violate the region")]
    NoFeasibleCompletion { user: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("scenario is not symmetric: {0}")]
    Asymmetric(String),

    #[error("bisection bracket [{lo}, {hi}] does not contain a sign change")]
    BadBracket { lo: f64, hi: f64 },

    #[error("profile {index} is not a Nash equilibrium")]
    NotNash { index: usize },

    #[error("correlated device has empty support")]
    EmptySupport,

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("numerical abort at t = {t}: {reason}")]
    NumericalAbort { t: f64, reason: String },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
