//! Crate-wide error type.

use crate::spectrum::GaussianFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs that must agree in size do not.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A size that must be a power of two is not.
    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),

    /// Mode layout cannot be realized on the pixel grid.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An input violates a contract that cannot be repaired locally,
    /// e.g. an unnormalized image handed to the photon-rate model.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Full inversion requires every basis row to be measured.
    #[error("incomplete sampling: have {have} of {need} rows")]
    IncompleteSampling { have: usize, need: usize },

    /// The same mask appears twice in one measurement set.
    #[error("duplicate measurement for basis row {natural_row}")]
    DuplicateMask { natural_row: usize },

    /// Least-squares fit ran out of iterations; the best iterate is attached.
    #[error("gaussian fit did not converge after {iterations} iterations (residual {residual:.3e})", iterations = .0.iterations, residual = .0.residual_norm)]
    NonConvergedFit(Box<GaussianFit>),

    /// Configuration text failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk artifact (CSV, PGM, permutation file).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
