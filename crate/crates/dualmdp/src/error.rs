//! Error type shared by every solver in the crate.

use crate::trace::SolveTrace;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("transition row (s={state}, a={action}) sums to {sum}, not 1")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("negative transition probability P({state},{action},{next}) = {value}")]
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("induced chain has more than one recurrent class; stationary distribution is not unique")]
    Multichain,

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("enumeration too large: {count} deterministic policies exceeds limit {limit}")]
    TooLarge { count: f64, limit: f64 },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("iteration limit reached")]
    IterationLimit { trace: SolveTrace },

    #[error("LP solution is not optimal")]
    NotOptimal,

    #[error("reference distribution has zero or non-finite mass at (s={state}, a={action})")]
    SupportViolation { state: usize, action: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("bisection bracket does not enclose a root (drift {lo_drift} at {lo}, {hi_drift} at {hi})")]
    BisectionBracketFailure {
        lo: f64,
        hi: f64,
        lo_drift: f64,
        hi_drift: f64,
    },

    #[error("gradient is zero: no ascent direction")]
    NoAscentDirection,

    #[error("line search failed after {trials} trials; parameters unchanged")]
    LineSearchFailed { trials: usize },

    #[error("conjugate gradient hit the iteration cap with residual {residual}")]
    MaxIterExceeded { residual: f64, best: Vec<f64> },

    #[error("analytic and finite-difference derivatives disagree ({what}: relative error {rel_err})")]
    NumericalInconsistency { what: String, rel_err: f64 },

    #[error("failed to generate a valid MDP after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
