use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value {value} at dof ({x1}, {x2})")]
    NonFinite { x1: f64, x2: f64, value: String },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("eigensolver did not converge in {iterations} iterations; residuals {residuals:?}")]
    EigenNotConverged { iterations: usize, residuals: Vec<f64> },

    #[error("zero-norm field")]
    ZeroNorm,

    #[error("orthogonal states, alignment undefined (|overlap| = {0:e})")]
    OrthogonalStates(f64),

    #[error("spaces are not nested: {0}")]
    NonNested(String),

    #[error("gradient method hit max_iter = {max_iter}; last energy change {last_change:e}")]
    MaxIterations {
        max_iter: usize,
        last_change: f64,
        energy_history: Vec<f64>,
    },

    #[error("step size underflow at iteration {iteration}: stationary or nonsmooth point")]
    StepUnderflow { iteration: usize, energy_history: Vec<f64> },

    #[error("consistency check failed: {0}")]
    CheckFailed(String),

    #[error("level N_h = {subdivisions}: {source}")]
    Level {
        subdivisions: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
