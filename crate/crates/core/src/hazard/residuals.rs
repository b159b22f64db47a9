use statrs::distribution::{ContinuousCDF, Normal};

use super::model::{ModelKind, PemModel};
use crate::data::ObservedSnapshot;

const CLAMP: f64 = 1e-12;

fn std_normal() -> Normal {
    Normal::standard()
}

/// Normal pseudo-residuals `Φ^{-1}(F(event) / F(bound))`.
///
/// Reporting models give one residual per reported claim with `τ - T > 0`,
/// using the bound `min(τ - T, ω)`. Payment models give one residual per
/// observed payment, using `Λ_0(V) / Λ_0(min(τ - R, ω))`; under the Poisson
/// process these ratios are uniform given the payment count.
pub fn pseudo_residuals(model: &PemModel, snapshot: &ObservedSnapshot<'_>) -> Vec<f64> {
    let normal = std_normal();
    let tau = snapshot.valuation_time();
    let omega = model.omega();
    let claims = snapshot.portfolio().claims();
    let ratios: Vec<f64> = match model.kind {
        ModelKind::ReportingDelay => snapshot
            .reported_claims()
            .iter()
            .filter_map(|&c| {
                let claim = &claims[c];
                let bound = (tau - claim.accident_time).min(omega);
                if bound <= 0.0 {
                    return None;
                }
                let x = model.covariates_for(claim);
                let denom = model.event_cdf(bound, &x);
                (denom > 0.0).then(|| model.event_cdf(claim.reporting_delay(), &x) / denom)
            })
            .collect(),
        ModelKind::PaymentIntensity => snapshot
            .payments()
            .iter()
            .filter_map(|p| {
                let bound = (tau - p.reporting_time).min(omega);
                let denom = model.baseline_cumulative(bound);
                (denom > 0.0).then(|| model.baseline_cumulative(p.payment_delay) / denom)
            })
            .collect(),
    };
    ratios
        .into_iter()
        .map(|r| normal.inverse_cdf(r.clamp(CLAMP, 1.0 - CLAMP)))
        .collect()
}

/// One-sample Kolmogorov–Smirnov distance to the standard normal.
pub fn ks_statistic(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let normal = std_normal();
    let mut xs = residuals.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic for sample size `n`
/// (Stephens' small-sample adjustment).
pub fn ks_critical_value(n: usize) -> f64 {
    let s = (n as f64).sqrt();
    1.6276 / (s + 0.12 + 0.11 / s)
}
