use std::path::PathBuf;

use thiserror::Error;

use crate::hazard::FitDiagnostics;

#[derive(Debug, Error)]
pub enum ReserveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{file}:{line}: unknown claim `{claim_id}`")]
    UnknownClaim {
        file: String,
        line: u64,
        claim_id: String,
    },

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no events to fit")]
    NoEvents,

    #[error("fit did not converge after {} iterations (gradient max-norm {:.3e})", .0.iterations, .0.gradient_norm)]
    NonConvergence(Box<FitDiagnostics>),

    #[error("claim after valuation date (accident {accident_time}, valuation {valuation_time})")]
    ClaimAfterValuation {
        accident_time: f64,
        valuation_time: f64,
    },

    #[error("claim not reported by valuation date")]
    ClaimNotReported,

    #[error("degenerate intensity: cumulative intensity over the settlement window is zero")]
    DegenerateIntensity,

    #[error("model kind mismatch: expected {expected}")]
    WrongModelKind { expected: &'static str },

    #[error("length mismatch: {0} amounts vs {1} probabilities")]
    LengthMismatch(usize, usize),

    #[error("probability {0} outside (0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("inconsistent probability curves: {0}")]
    InconsistentCurves(String),

    #[error("variance undefined for fewer than two paid payments")]
    VarianceUndefined,

    #[error("insufficient mass at step {0}")]
    InsufficientMass(usize),

    #[error("non-monotone probability curve at index {0}")]
    NonMonotoneCurve(usize),

    #[error("no paid payments")]
    NoPayments,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ReserveError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReserveError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input data rather than by model fitting.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, ReserveError::NonConvergence(_))
    }
}

pub type Result<T, E = ReserveError> = std::result::Result<T, E>;
