use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample index {index} out of range for n = {n}")]
    SampleIndex { index: usize, n: usize },

    #[error("objective `{0}` provides no Hessian")]
    MissingHessian(String),

    #[error("divergence at step {step}{}", replica.map(|r| format!(" (replica {r})")).unwrap_or_default())]
    Diverged { step: usize, replica: Option<usize> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("matrix is not symmetric within tolerance (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("time {t} outside integrated horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("no nontrivial transition: 4 m0 / (eta Sigma) = {ratio} <= 1, feedback value is {feedback}")]
    NoTransition { ratio: f64, feedback: f64 },
}

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    /// Attach a replica index to a divergence error.
    pub fn with_replica(self, r: usize) -> Self {
        match self {
            Error::Diverged { step, .. } => Error::Diverged {
                step,
                replica: Some(r),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}
