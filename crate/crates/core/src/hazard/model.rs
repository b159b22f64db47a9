use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use crate::data::Claim;
use crate::error::{ReserveError, Result};

/// Name of the extra payment-model feature holding the realised reporting delay.
pub const REPORTING_DELAY_FEATURE: &str = "reporting_delay";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Hazard of the reporting delay U given claim covariates.
    ReportingDelay,
    /// Intensity of the payment counting process after reporting, given
    /// claim covariates and U.
    PaymentIntensity,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ReportingDelay => "reporting-delay",
            ModelKind::PaymentIntensity => "payment-intensity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// γ = 1.
    #[default]
    Unit,
    /// γ = observed paid amount of the claim.
    Amount,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub n_units: usize,
    pub n_events: f64,
    /// Grid intervals without events; their rate is pinned to the floor.
    pub pinned_intervals: Vec<usize>,
    /// Standard errors (observed information) for the log-baseline then the
    /// coefficients; `None` for pinned parameters.
    pub std_errors: Vec<Option<f64>>,
    pub weight_scheme: WeightScheme,
    pub truncation_adjusted: bool,
}

/// Piecewise-exponential proportional-hazards model:
/// `λ(t | x) = exp(log_baseline[interval(t)] + <x, coefficients>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PemModel {
    pub kind: ModelKind,
    pub grid: TimeGrid,
    pub log_baseline: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
    pub diagnostics: FitDiagnostics,
}

impl PemModel {
    pub fn new(
        kind: ModelKind,
        grid: TimeGrid,
        log_baseline: Vec<f64>,
        coefficients: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if log_baseline.len() != grid.n_intervals() {
            return Err(ReserveError::InvalidInput(format!(
                "{} log-baseline values for {} grid intervals",
                log_baseline.len(),
                grid.n_intervals()
            )));
        }
        if coefficients.len() != feature_names.len() {
            return Err(ReserveError::InvalidInput(format!(
                "{} coefficients for {} features",
                coefficients.len(),
                feature_names.len()
            )));
        }
        if log_baseline
            .iter()
            .chain(&coefficients)
            .any(|v| !v.is_finite())
        {
            return Err(ReserveError::InvalidInput(
                "non-finite model parameter".into(),
            ));
        }
        Ok(PemModel {
            kind,
            grid,
            log_baseline,
            coefficients,
            feature_names,
            diagnostics: FitDiagnostics::default(),
        })
    }

    /// Covariate-free model with the given per-interval rates.
    pub fn from_rates(kind: ModelKind, grid: TimeGrid, rates: &[f64]) -> Result<Self> {
        let logs = rates.iter().map(|r| r.ln()).collect();
        PemModel::new(kind, grid, logs, vec![], vec![])
    }

    pub fn omega(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn baseline_rates(&self) -> Vec<f64> {
        self.log_baseline.iter().map(|a| a.exp()).collect()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.coefficients.len());
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn hazard(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.grid.interval_of(t);
        (self.log_baseline[n] + self.linear_predictor(x)).exp()
    }

    /// `∫_0^t λ_0(s) ds`, with `t` clamped to `[0, ω]`.
    pub fn baseline_cumulative(&self, t: f64) -> f64 {
        self.grid
            .integrate(&self.baseline_rates(), t.min(self.omega()))
    }

    /// `∫_0^t λ(s | x) ds`.
    pub fn cumulative_hazard(&self, t: f64, x: &[f64]) -> f64 {
        self.linear_predictor(x).exp() * self.baseline_cumulative(t)
    }

    /// Distribution function `1 - exp(-Λ(t | x))` of a hazard model.
    pub fn event_cdf(&self, t: f64, x: &[f64]) -> f64 {
        -(-self.cumulative_hazard(t, x)).exp_m1()
    }

    /// Covariate vector the model expects for `claim`: its features, plus the
    /// reporting delay for payment-intensity models. Empty for covariate-free models.
    pub fn covariates_for(&self, claim: &Claim) -> Vec<f64> {
        if self.coefficients.is_empty() {
            return Vec::new();
        }
        let mut x = claim.covariates.clone();
        if self.kind == ModelKind::PaymentIntensity {
            x.push(claim.reporting_delay());
        }
        x
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| ReserveError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| ReserveError::io(path, e))?;
        PemModel::from_json(&s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedCoefficient {
    name: String,
    value: f64,
}

/// On-disk JSON layout of a fitted model.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    kind: ModelKind,
    cut_points: TimeGrid,
    log_baseline: Vec<f64>,
    coefficients: Vec<NamedCoefficient>,
    diagnostics: FitDiagnostics,
}

impl From<&PemModel> for ModelDocument {
    fn from(m: &PemModel) -> Self {
        ModelDocument {
            kind: m.kind,
            cut_points: m.grid.clone(),
            log_baseline: m.log_baseline.clone(),
            coefficients: m
                .feature_names
                .iter()
                .zip(&m.coefficients)
                .map(|(n, &v)| NamedCoefficient {
                    name: n.clone(),
                    value: v,
                })
                .collect(),
            diagnostics: m.diagnostics.clone(),
        }
    }
}

impl TryFrom<ModelDocument> for PemModel {
    type Error = ReserveError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let (names, values) = doc
            .coefficients
            .into_iter()
            .map(|c| (c.name, c.value))
            .unzip();
        let mut m = PemModel::new(doc.kind, doc.cut_points, doc.log_baseline, values, names)?;
        m.diagnostics = doc.diagnostics;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite midpoint rule; uses interior nodes only, so it never samples
    /// a rate exactly on a cut point.
    fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn cumulative_matches_quadrature() {
        let grid = TimeGrid::new(vec![0.0, 1.5, 4.0, 9.0, 24.0]).unwrap();
        let m = PemModel::new(
            ModelKind::ReportingDelay,
            grid.clone(),
            vec![0.3, -0.2, -1.0, -2.5],
            vec![0.4, -0.1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let x = [1.0, 2.0];
        let mut u = 0.37_f64;
        for _ in 0..10 {
            u = (u * 7.31 + 0.123).fract();
            let t = u * 24.0;
            let mut quad = 0.0;
            for n in 0..grid.n_intervals() {
                let (a, b) = (grid.cuts()[n], grid.cuts()[n + 1].min(t));
                if b > a {
                    quad += midpoint(|s| m.hazard(s, &x), a, b, 200);
                }
            }
            let exact = m.cumulative_hazard(t, &x);
            assert!(
                ((exact - quad) / quad).abs() < 1e-10,
                "t={t} {exact} vs {quad}"
            );
        }
    }

    proptest! {
        #[test]
        fn json_round_trip_is_lossless(
            logs in proptest::collection::vec(-20.0f64..5.0, 3),
            coefs in proptest::collection::vec(-3.0f64..3.0, 2),
            ll in -1e6f64..0.0,
        ) {
            let grid = TimeGrid::new(vec![0.0, 1.0, 2.5, 12.0]).unwrap();
            let mut m = PemModel::new(
                ModelKind::PaymentIntensity, grid, logs, coefs,
                vec!["x".into(), REPORTING_DELAY_FEATURE.into()],
            ).unwrap();
            m.diagnostics.log_likelihood = ll;
            m.diagnostics.std_errors = vec![Some(0.1), None, Some(ll.abs().sqrt()), Some(1.0/3.0), None];
            let back = PemModel::from_json(&m.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
