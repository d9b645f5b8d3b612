use thiserror::Error;

use crate::em::EmTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at component {index} ({context})")]
    NonFinite { index: usize, context: &'static str },

    #[error("{op} of non-positive value {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("invalid differentiation step {0}: must be finite and > 0")]
    InvalidStep(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyData,

    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("zero likelihood normalizer for record {record}")]
    ZeroNormalizer { record: usize },

    #[error("M-step Newton iteration for component {component} did not converge in {iterations} iterations")]
    NewtonFailed { component: usize, iterations: usize },

    #[error("EM aborted after {} iterate(s): {source}", trace.iterates.len())]
    EmAborted {
        #[source]
        source: Box<Error>,
        trace: Box<EmTrace>,
    },

    #[error("Hessian asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}; gradient implementation is inconsistent")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("not at mode: gradient max-norm {grad_norm:e} exceeds {tolerance:e}")]
    NotAtMode { grad_norm: f64, tolerance: f64 },

    #[error("saddle or degenerate mode: -Hessian is not positive-definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("overflow or underflow in {0}")]
    Overflow(&'static str),

    #[error("quadrature grid too coarse: full and half resolution differ by {difference:e}")]
    GridTooCoarse { difference: f64 },

    #[error("quadrature supports at most 2 parameters, model has {0}")]
    QuadratureDimension(usize),
}
