use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty domain")]
    EmptyDomain,
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("point not in domain")]
    PointNotInDomain,
    #[error("boundary point")]
    BoundaryPoint,
    #[error("pole or nonpositive argument: {0}")]
    NonPositiveArgument(f64),
    #[error("outside Loss–Sloane range: need 1/2 < sigma < p/2 (got p = {p}, sigma = {sigma})")]
    OutsideLossSloaneRange { p: f64, sigma: f64 },
    #[error("near-field quadrature failed: relative change {change:.3e} at depth {depth}")]
    NearFieldQuadrature { change: f64, depth: usize },
    #[error("no interior nodes")]
    NoInteriorNodes,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rearrangement requires nonnegative u")]
    NegativeValues,
    #[error("unsupported u: {0}")]
    UnsupportedFunction(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("eigen solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
