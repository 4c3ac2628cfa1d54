use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tangent vectors are anchored at different base points")]
    BasePointMismatch,

    #[error("factor is not orthonormal: |U^T U - I|_F = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("shift {shift} does not make the preconditioner positive definite (need > {bound})")]
    NotPositiveDefinite { shift: f64, bound: f64 },

    #[error("at least one minimal eigenvector is required")]
    EmptyEigenBasis,

    #[error("eigenpair residual {residual:e} exceeds tolerance {tol:e}; classification is unreliable")]
    UnreliableEigenpair { residual: f64, tol: f64 },

    #[error("eigensolver did not converge in {iterations} iterations (best ritz value {lambda}, residual {residual:e})")]
    EigNoConvergence {
        iterations: usize,
        lambda: f64,
        residual: f64,
    },

    #[error("sketch is rank deficient: numerical rank {found} < requested rank {requested}")]
    RankDeficientSketch { requested: usize, found: usize },

    #[error("hard-case boundary: whitened matrix is not positive definite (smallest eigenvalue {lambda_min:e})")]
    HardCaseBoundary { lambda_min: f64 },

    #[error("dimension {n} exceeds the dense limit {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error("line search stalled (step fell below {min_step:e})")]
    Stalled { min_step: f64 },

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("problem file: {0}")]
    ProblemFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
