use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no sign change on bracket [{lo}, {hi}]: g(lo) = {g_lo:e}, g(hi) = {g_hi:e}")]
    Bracket {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("nonlinear solve did not converge after {iterations} iterations (best residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("linear system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular matrix (zero pivot at row {0})")]
    Singular(usize),

    #[error("Krylov solver stalled after {iterations} iterations (relative residual {relative_residual:e})")]
    KrylovStall {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("time step {dt} violates the advective limit; use dt <= {suggested}")]
    Cfl { dt: f64, suggested: f64 },

    #[error("fixed-point iteration diverged: {0}")]
    PicardDivergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
