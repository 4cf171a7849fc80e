use thiserror::Error;

/// Errors raised by the propagation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("overlap underflow: |<g_z|psi0>| = {magnitude:e} makes the Husimi weight overflow")]
    WeightOverflow { magnitude: f64 },

    #[error("caustic: prefactor determinant |A| = {magnitude:e} at t = {time}")]
    Caustic { magnitude: f64, time: f64 },

    #[error("non-finite force at q = {position:?}")]
    NonFiniteForce { position: Vec<f64> },

    #[error("{0} is out of range")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
