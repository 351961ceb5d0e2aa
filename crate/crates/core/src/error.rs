//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by solvers, samplers, and estimators.
#[derive(Debug, Error)]
pub enum VbError {
    /// A parameter fails its positivity or finiteness requirement.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An argument lies outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (wrong dimension, empty, non-finite entries).
    #[error("invalid input: {0}")]
    Input(String),

    /// A matrix operation failed (non-SPD solve, singular system).
    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    /// A numeric quantity became non-finite during iteration.
    /// The message records the iteration index and the offending values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A variational family became degenerate (for example a factor
    /// loading collapsing to zero where the natural gradient divides by it).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// The requested strategy needs an operation this family does not provide.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, VbError>;
