use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular system: lambda = {lambda} is within tolerance of an eigenvalue")]
    Singular { lambda: f64 },

    #[error("resolvent R({lambda}, A) has a negative entry ({entry:e})")]
    NotPositive { lambda: f64, entry: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("power iteration did not converge after {iterations} iterations; last estimates {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    #[error("time step failed: {0}")]
    StepFailure(String),

    #[error("gain fit refused: {0}")]
    FitRefused(String),

    #[error(
        "ISS estimate violated in trial {trial} (seed {seed}) at t = {time}: \
         |z(t)| = {state_norm}, bound = {bound}"
    )]
    EstimateViolated {
        trial: usize,
        seed: u64,
        time: f64,
        state_norm: f64,
        bound: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
