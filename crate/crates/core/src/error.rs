use thiserror::Error;

use crate::pk::{PopPkFit, PopPkParams};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty exposure window ({0}, {1})")]
    EmptyWindow(f64, f64),

    #[error("unsupported exposure kind: {0}")]
    UnsupportedKind(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    /// The stochastic EM did not settle within its iteration budget. The last
    /// iterate is kept so callers that tolerate a noisy fit can still use it.
    #[error("population PK fit did not converge after {} iterations", trajectory.len())]
    NonConvergence {
        trajectory: Vec<PopPkParams>,
        last: Box<PopPkFit>,
    },

    #[error("target error: {0}")]
    Target(String),

    #[error("sampler adaptation failed: {0}")]
    Adaptation(String),

    #[error("poor mixing: max split-R-hat {0:.3} >= 1.1")]
    PoorMixing(f64),

    #[error("no admissible regimen: every gain is -inf")]
    NoAdmissibleRegimen,

    #[error("prior calibration failed: {0}")]
    Calibration(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
