//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error type for construction, computation, and validation failures.
#[derive(Debug, Error)]
pub enum OdeError {
    /// Dimensions of matrices/vectors disagree with each other or with the
    /// declared problem dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A scalar parameter is out of its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An evaluator or a computation produced NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A dense materialisation exceeds the size cap.
    #[error("size cap exceeded: {0}")]
    SizeCapExceeded(String),

    /// Brute-force enumeration limits (K, M) exceeded.
    #[error("enumeration limit exceeded: {0}")]
    EnumerationLimit(String),

    /// An iterative method (power iteration, step doubling) failed to
    /// converge within its iteration cap.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// The input is degenerate (e.g. identically zero where a norm is
    /// required).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The amplification factor ℛ is unbounded because the success-amplitude
    /// lower bound is non-positive (pathological cancellation).
    #[error("pathological amplification: {0}")]
    PathologicalAmplification(String),

    /// A parameter selector hit its search cap (K ≤ 200, M ≤ 2^20).
    #[error("selection cap reached: {0}")]
    SelectionCap(String),
}

pub type Result<T> = std::result::Result<T, OdeError>;
