use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("plans live on different grids")]
    GridMismatch,
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("singular point at t = {t}: {what}")]
    Singular { t: f64, what: String },
    #[error("felicity domain error at t = {t}: {what}")]
    FelicityDomain { t: f64, what: String },
    #[error("no sign change found while bracketing a root; trace: {trace:?}")]
    NoBracket { trace: Vec<(f64, f64)> },
    #[error("root finder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("fixed-point iteration stalled after {iterations} iterations (last delta {last_delta:e})")]
    NoFixedPoint { iterations: usize, last_delta: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("search space too large: {candidates} candidates (limit {limit})")]
    TooManyCandidates { candidates: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
