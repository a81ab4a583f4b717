use thiserror::Error;

/// Errors raised by the estimation and certification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability {0}: must lie in [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid urn: {0}")]
    InvalidUrn(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("dimension mismatch: expected at most {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range (dimension {dim})")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("witness infeasible: {0}")]
    WitnessInfeasible(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}
