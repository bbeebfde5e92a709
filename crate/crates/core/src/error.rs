use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is empty or not square")]
    InvalidShape,
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("shifted matrix A + ({shift})I is numerically singular (pivot {pivot:.3e} below {threshold:.3e})")]
    SingularShift {
        shift: Complex64,
        pivot: f64,
        threshold: f64,
    },
    #[error("matrix is not numerically diagonalizable (eigenvector condition {condition:.3e} exceeds {cap:.1e})")]
    NotDiagonalizable { condition: f64, cap: f64 },
    #[error("eigenvalue computation failed to converge")]
    EigenFailure,
    #[error("quadrature did not converge: {0}")]
    NoConvergence(String),
    #[error("integrand is not finite at node {node} (z = {z})")]
    NonFiniteIntegrand { node: usize, z: Complex64 },
    #[error("spectrum of -A meets the sector: A + ({z})I is singular")]
    SpectrumInSector { z: Complex64 },
    #[error("spectrum of -A meets the parabola region: A + ({z})I is singular")]
    SpectrumInRegion { z: Complex64 },
    #[error("operator is not certified sectorial at angle 0: {0}")]
    NotSectorial(String),
    #[error("0 lies in the spectrum of A")]
    SingularOperator,
    #[error("angle out of range: {0}")]
    AngleOutOfRange(String),
    #[error("function violates its decay envelope: {0}")]
    EnvelopeViolation(String),
    #[error("hypotheses violated: {0}")]
    HypothesisViolation(String),
    #[error("operators are not resolvent commuting (residual {residual:.3e})")]
    CommutationViolation { residual: f64 },
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("outside the admissible region: {0}")]
    RegionViolation(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
