//! Piecewise-exponential hazard models for the reporting delay and the
//! post-reporting payment process, and the inclusion probabilities they imply.

mod fit;
mod grid;
mod inclusion;
mod likelihood;
mod model;
mod residuals;

pub use fit::{
    fit_likelihood, fit_payment_model, fit_reporting_model, payment_units, reporting_units,
    FitOptions, RATE_FLOOR,
};
pub use grid::TimeGrid;
pub use inclusion::{
    compute_inclusion_probabilities, compute_inclusion_probabilities_at,
    payment_inclusion_probability, reporting_inclusion_probability, InclusionProbabilities,
    DEFAULT_FLOOR,
};
pub use likelihood::{Evaluation, PemLikelihood, PemUnit};
pub use model::{FitDiagnostics, ModelKind, PemModel, WeightScheme, REPORTING_DELAY_FEATURE};
pub use residuals::{ks_critical_value, ks_statistic, pseudo_residuals};
