use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample {index}: metric is not positive definite (smallest pivot {min_pivot:e})")]
    NotPositiveDefinite { index: usize, min_pivot: f64 },

    #[error("sample count mismatch: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },

    #[error("path parameter t = {0} lies outside [0, 1]")]
    ParameterOutOfRange(f64),

    #[error("mesh resolution {0} is too small (need n >= 2)")]
    InvalidResolution(usize),

    #[error("eigensolver stopped after {iterations} block steps with {converged}/{requested} converged pairs")]
    NoConvergence {
        iterations: usize,
        converged: usize,
        requested: usize,
    },

    #[error("spectral window contains no eigenvalues")]
    EmptyWindow,

    #[error("eigenvalue cluster has dimension {0}; use the degenerate cluster rates instead")]
    DegenerateCluster(usize),

    #[error("basis is not orthonormal (Gram deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("shift {shift} lies within {distance:e} of the spectrum")]
    SingularResolvent { shift: f64, distance: f64 },

    #[error("eigenvalue {eigenvalue} lies {distance:e} from the contour")]
    ContourTooClose { eigenvalue: f64, distance: f64 },

    #[error("transfer map left its invertibility neighbourhood (condition number {0:e})")]
    SingularTransfer(f64),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("tracking failed: {0}")]
    Tracking(String),

    #[error("first-order rates do not force a crossing: {0}")]
    WrongRates(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
