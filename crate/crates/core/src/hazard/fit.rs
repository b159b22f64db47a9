use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::likelihood::{PemLikelihood, PemUnit};
use super::model::{FitDiagnostics, ModelKind, PemModel, WeightScheme, REPORTING_DELAY_FEATURE};
use crate::data::ObservedSnapshot;
use crate::error::{ReserveError, Result};

/// Rate given to grid intervals that carry no events.
pub const RATE_FLOOR: f64 = 1e-8;

const MAX_HALVINGS: usize = 30;
const VALUE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weight_scheme: WeightScheme,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub ridge_penalty: f64,
    /// Condition each reporting delay on `U ≤ τ - T`. Only meaningful for the
    /// reporting model.
    pub adjust_truncation: bool,
}

impl FitOptions {
    /// Amount weights with truncation adjustment.
    pub fn reporting() -> Self {
        FitOptions {
            weight_scheme: WeightScheme::Amount,
            ..FitOptions::payment()
        }
    }

    pub fn payment() -> Self {
        FitOptions {
            weight_scheme: WeightScheme::Unit,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            ridge_penalty: 1e-8,
            adjust_truncation: true,
        }
    }

    pub fn with_weights(mut self, scheme: WeightScheme) -> Self {
        self.weight_scheme = scheme;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) || self.max_iterations == 0 || self.ridge_penalty < 0.0
        {
            return Err(ReserveError::InvalidInput(
                "fit options need tolerance > 0, max_iterations >= 1 and ridge >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions::payment()
    }
}

fn check_grid(grid: &TimeGrid, snapshot: &ObservedSnapshot<'_>) -> Result<()> {
    let omega = snapshot.portfolio().max_settlement();
    if (grid.horizon() - omega).abs() > 1e-9 * omega {
        return Err(ReserveError::InvalidInput(format!(
            "grid ends at {} but the portfolio's maximum settlement is {omega}",
            grid.horizon()
        )));
    }
    Ok(())
}

/// Mean-one weights; the argmax is unchanged and the gradient tolerance keeps its scale.
fn normalise(units: &mut [PemUnit]) {
    let n = units.len() as f64;
    let total: f64 = units.iter().map(|u| u.weight).sum();
    if total > 0.0 {
        for u in units {
            u.weight *= n / total;
        }
    }
}

/// Builds the reporting-delay likelihood units for a snapshot.
///
/// Claims with `τ - T = 0` are skipped (the truncated density is undefined),
/// as are claims with zero amount weight.
pub fn reporting_units(
    snapshot: &ObservedSnapshot<'_>,
    grid: &TimeGrid,
    options: &FitOptions,
) -> Vec<PemUnit> {
    let tau = snapshot.valuation_time();
    let omega = grid.horizon();
    let claims = snapshot.portfolio().claims();
    let paid = match options.weight_scheme {
        WeightScheme::Amount => Some(snapshot.paid_by_claim()),
        WeightScheme::Unit => None,
    };
    let mut units: Vec<PemUnit> = snapshot
        .reported_claims()
        .iter()
        .filter_map(|&c| {
            let claim = &claims[c];
            let window = tau - claim.accident_time;
            if window <= 0.0 {
                return None;
            }
            let weight = paid.as_ref().map_or(1.0, |p| p[c]);
            if weight <= 0.0 {
                return None;
            }
            let u = claim.reporting_delay();
            let truncation = (options.adjust_truncation && window < omega).then_some(window);
            Some(PemUnit {
                covariates: claim.covariates.clone(),
                weight,
                events: vec![(grid.interval_of(u), 1.0)],
                exposure_end: u,
                truncation,
            })
        })
        .collect();
    normalise(&mut units);
    units
}

/// Builds the payment-process likelihood units: one per reported claim with
/// a positive observation window `min(τ - R, ω)`.
pub fn payment_units(
    snapshot: &ObservedSnapshot<'_>,
    grid: &TimeGrid,
    options: &FitOptions,
) -> Vec<PemUnit> {
    let tau = snapshot.valuation_time();
    let omega = grid.horizon();
    let portfolio = snapshot.portfolio();
    let claims = portfolio.claims();
    let mut events: Vec<Vec<(usize, f64)>> = vec![Vec::new(); claims.len()];
    for p in snapshot.payments() {
        let n = grid.interval_of(p.payment_delay);
        let slot = &mut events[p.claim_row];
        match slot.iter_mut().find(|(k, _)| *k == n) {
            Some((_, c)) => *c += 1.0,
            None => slot.push((n, 1.0)),
        }
    }
    let paid = match options.weight_scheme {
        WeightScheme::Amount => Some(snapshot.paid_by_claim()),
        WeightScheme::Unit => None,
    };
    let mut units: Vec<PemUnit> = snapshot
        .reported_claims()
        .iter()
        .filter_map(|&c| {
            let claim = &claims[c];
            let window = (tau - claim.reporting_time).min(omega);
            if window <= 0.0 {
                return None;
            }
            let weight = paid.as_ref().map_or(1.0, |p| p[c]);
            if weight <= 0.0 {
                return None;
            }
            let mut x = claim.covariates.clone();
            x.push(claim.reporting_delay());
            Some(PemUnit {
                covariates: x,
                weight,
                events: std::mem::take(&mut events[c]),
                exposure_end: window,
                truncation: None,
            })
        })
        .collect();
    normalise(&mut units);
    units
}

/// Fits the reporting-delay hazard by maximising the right-truncated weighted
/// likelihood `Σ γ_j [log f(U_j | X_j) - log F(τ - T_j | X_j)]`.
pub fn fit_reporting_model(
    snapshot: &ObservedSnapshot<'_>,
    grid: &TimeGrid,
    options: &FitOptions,
) -> Result<PemModel> {
    options.validate()?;
    check_grid(grid, snapshot)?;
    let units = reporting_units(snapshot, grid, options);
    let features = snapshot.portfolio().feature_names().to_vec();
    let lik = PemLikelihood::new(grid.clone(), features.len(), units, options.ridge_penalty);
    fit_likelihood(&lik, ModelKind::ReportingDelay, features, options)
}

/// Fits the payment-occurrence intensity as a non-homogeneous Poisson process
/// over each reported claim's window `(0, min(τ - R, ω)]`. The realised
/// reporting delay enters as an extra covariate.
pub fn fit_payment_model(
    snapshot: &ObservedSnapshot<'_>,
    grid: &TimeGrid,
    options: &FitOptions,
) -> Result<PemModel> {
    options.validate()?;
    check_grid(grid, snapshot)?;
    let units = payment_units(snapshot, grid, options);
    let mut features = snapshot.portfolio().feature_names().to_vec();
    features.push(REPORTING_DELAY_FEATURE.to_string());
    let lik = PemLikelihood::new(grid.clone(), features.len(), units, options.ridge_penalty);
    fit_likelihood(&lik, ModelKind::PaymentIntensity, features, options)
}

/// Maximises `lik` by damped Newton iterations and wraps the result in a model.
pub fn fit_likelihood(
    lik: &PemLikelihood,
    kind: ModelKind,
    feature_names: Vec<String>,
    options: &FitOptions,
) -> Result<PemModel> {
    let m = lik.grid().n_intervals();
    let d = lik.dim();
    let events = lik.events_per_interval();
    let total_events: f64 = events.iter().sum();
    if lik.units().is_empty() || total_events <= 0.0 {
        return Err(ReserveError::NoEvents);
    }
    let exposure = lik.exposure_per_interval();
    let total_exposure: f64 = exposure.iter().sum();
    let pooled = (total_events / total_exposure.max(f64::MIN_POSITIVE)).ln();

    let free: Vec<bool> = (0..d).map(|i| i >= m || events[i] > 0.0).collect();
    let pinned: Vec<usize> = (0..m).filter(|&n| !free[n]).collect();
    let mut theta: Vec<f64> = (0..d)
        .map(|i| match (i < m, free[i]) {
            (true, true) => pooled,
            (true, false) => RATE_FLOOR.ln(),
            (false, _) => 0.0,
        })
        .collect();

    let outcome = newton(lik, &mut theta, &free, options);
    let eval = lik.evaluate(&theta);
    let std_errors = standard_errors(&eval.hessian, &free);
    let diagnostics = FitDiagnostics {
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        log_likelihood: eval.value,
        converged: outcome.converged,
        n_units: lik.units().len(),
        n_events: total_events,
        pinned_intervals: pinned,
        std_errors,
        weight_scheme: options.weight_scheme,
        truncation_adjusted: kind == ModelKind::ReportingDelay && options.adjust_truncation,
    };
    if !outcome.converged {
        return Err(ReserveError::NonConvergence(Box::new(diagnostics)));
    }
    let coefficients = theta.split_off(m);
    let mut model = PemModel::new(kind, lik.grid().clone(), theta, coefficients, feature_names)?;
    model.diagnostics = diagnostics;
    Ok(model)
}

struct NewtonOutcome {
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

fn free_indices(free: &[bool]) -> Vec<usize> {
    free.iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| i)
        .collect()
}

fn newton(
    lik: &PemLikelihood,
    theta: &mut [f64],
    free: &[bool],
    options: &FitOptions,
) -> NewtonOutcome {
    let idx = free_indices(free);
    let k = idx.len();
    let mut gradient_norm = f64::INFINITY;
    for iter in 0..options.max_iterations {
        let eval = lik.evaluate(theta);
        let g = DVector::from_iterator(k, idx.iter().map(|&i| eval.gradient[i]));
        gradient_norm = g.amax();
        if gradient_norm < options.gradient_tolerance {
            return NewtonOutcome {
                iterations: iter,
                gradient_norm,
                converged: true,
            };
        }
        let neg_h = DMatrix::from_fn(k, k, |a, b| -eval.hessian[(idx[a], idx[b])]);
        let Some(step) = solve_damped(&neg_h, &g) else {
            break;
        };
        // near the optimum the gain falls below the rounding error of the value
        let slack = VALUE_SLACK * eval.value.abs().max(1.0);
        let mut accepted = false;
        let mut scale = 1.0;
        let mut trial = theta.to_vec();
        for _ in 0..=MAX_HALVINGS {
            for (j, &i) in idx.iter().enumerate() {
                trial[i] = theta[i] + scale * step[j];
            }
            let v = lik.value(&trial);
            if v.is_finite() && v >= eval.value - slack {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        theta.copy_from_slice(&trial);
    }
    // final check after the last accepted step
    let g = lik.gradient(theta);
    let final_norm = idx.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
    if final_norm < options.gradient_tolerance {
        return NewtonOutcome {
            iterations: options.max_iterations,
            gradient_norm: final_norm,
            converged: true,
        };
    }
    NewtonOutcome {
        iterations: options.max_iterations,
        gradient_norm: final_norm.min(gradient_norm),
        converged: false,
    }
}

/// Solves `A δ = g` for symmetric `A`, adding a diagonal shift until `A` is
/// positive definite.
fn solve_damped(a: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = a.diagonal().iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let mut mu = 1e-8 * scale;
    for _ in 0..40 {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += mu;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(g));
        }
        mu *= 10.0;
    }
    None
}

fn standard_errors(hessian: &DMatrix<f64>, free: &[bool]) -> Vec<Option<f64>> {
    let idx = free_indices(free);
    let k = idx.len();
    let info = DMatrix::from_fn(k, k, |a, b| -hessian[(idx[a], idx[b])]);
    let mut out = vec![None; free.len()];
    if let Some(ch) = info.cholesky() {
        let cov = ch.inverse();
        for (j, &i) in idx.iter().enumerate() {
            let v = cov[(j, j)];
            if v.is_finite() && v >= 0.0 {
                out[i] = Some(v.sqrt());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{snapshot, Claim, Payment, Portfolio};

    fn claim(id: usize, t: f64, r: f64, x: Vec<f64>) -> Claim {
        Claim {
            claim_id: format!("c{id}"),
            accident_time: t,
            reporting_time: r,
            covariates: x,
        }
    }

    #[test]
    fn constant_hazard_complete_data_is_events_over_exposure() {
        // 10 reporting delays summing to 5 months, all fully developed at τ.
        let delays = [0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.6, 0.7, 0.8, 0.9];
        assert!((delays.iter().sum::<f64>() - 5.0).abs() < 1e-12);
        let claims: Vec<Claim> = delays
            .iter()
            .enumerate()
            .map(|(i, &u)| claim(i, 0.0, u, vec![]))
            .collect();
        let pf = Portfolio::new(claims, vec![], vec![], 24.0).unwrap();
        let snap = snapshot(&pf, 30.0);
        let grid = TimeGrid::single(24.0).unwrap();
        let opts = FitOptions::reporting().with_weights(WeightScheme::Unit);
        let m = fit_reporting_model(&snap, &grid, &opts).unwrap();
        assert!((m.baseline_rates()[0] / 2.0 - 1.0).abs() < 1e-8);
        assert!(m.diagnostics.converged);
    }

    #[test]
    fn no_reported_claims_is_no_events() {
        let pf = Portfolio::new(vec![claim(0, 0.0, 5.0, vec![])], vec![], vec![], 24.0).unwrap();
        let snap = snapshot(&pf, 2.0);
        let grid = TimeGrid::single(24.0).unwrap();
        let err = fit_reporting_model(&snap, &grid, &FitOptions::reporting()).unwrap_err();
        assert!(matches!(err, ReserveError::NoEvents));
        assert_eq!(err.to_string(), "no events to fit");
    }

    fn payment_portfolio(extra_idle_claim: bool) -> Portfolio {
        // three claims, each observed for 10/3 months after reporting; 30 payments.
        let mut claims = Vec::new();
        let mut pays = Vec::new();
        for c in 0..3 {
            claims.push(claim(c, 0.0, 0.0, vec![]));
            for k in 0..10 {
                pays.push(Payment {
                    claim_id: format!("c{c}"),
                    payment_time: 0.3 * k as f64 + 0.05,
                    amount: 1.0,
                });
            }
        }
        if extra_idle_claim {
            claims.push(claim(3, 0.0, 0.0, vec![]));
        }
        Portfolio::new(claims, pays, vec![], 24.0).unwrap()
    }

    #[test]
    fn constant_intensity_is_payments_over_exposure() {
        let pf = payment_portfolio(false);
        let snap = snapshot(&pf, 10.0 / 3.0);
        let m = fit_payment_model(
            &snap,
            &TimeGrid::single(24.0).unwrap(),
            &FitOptions::payment(),
        )
        .unwrap();
        assert!((m.baseline_rates()[0] / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn event_free_claim_lowers_fitted_rate() {
        let grid = TimeGrid::single(24.0).unwrap();
        let with = payment_portfolio(true);
        let without = payment_portfolio(false);
        let r_with = fit_payment_model(&snapshot(&with, 10.0 / 3.0), &grid, &FitOptions::payment())
            .unwrap()
            .baseline_rates()[0];
        let r_without = fit_payment_model(
            &snapshot(&without, 10.0 / 3.0),
            &grid,
            &FitOptions::payment(),
        )
        .unwrap()
        .baseline_rates()[0];
        assert!(r_without > r_with);
    }

    #[test]
    fn grid_must_end_at_omega() {
        let pf = payment_portfolio(false);
        let snap = snapshot(&pf, 3.0);
        let err = fit_payment_model(
            &snap,
            &TimeGrid::single(12.0).unwrap(),
            &FitOptions::payment(),
        );
        assert!(matches!(err, Err(ReserveError::InvalidInput(_))));
    }

    #[test]
    fn empty_intervals_are_pinned() {
        let pf = payment_portfolio(false);
        let snap = snapshot(&pf, 10.0 / 3.0);
        let grid = TimeGrid::new(vec![0.0, 2.0, 12.0, 24.0]).unwrap();
        let m = fit_payment_model(&snap, &grid, &FitOptions::payment()).unwrap();
        // no payment delay beyond 10/3, and no exposure at all past 12
        assert_eq!(m.diagnostics.pinned_intervals, vec![2]);
        assert!((m.baseline_rates()[2] / RATE_FLOOR - 1.0).abs() < 1e-12);
        assert!(m.diagnostics.std_errors[2].is_none());
    }

    #[test]
    fn non_convergence_is_reported() {
        let pf = payment_portfolio(false);
        let snap = snapshot(&pf, 10.0 / 3.0);
        let opts = FitOptions {
            max_iterations: 1,
            gradient_tolerance: 1e-300,
            ..FitOptions::payment()
        };
        let err = fit_payment_model(&snap, &TimeGrid::single(24.0).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, ReserveError::NonConvergence(_)));
        assert!(!err.is_data_error());
    }

    #[test]
    fn bad_options_rejected() {
        let pf = payment_portfolio(false);
        let snap = snapshot(&pf, 3.0);
        let opts = FitOptions {
            gradient_tolerance: 0.0,
            ..FitOptions::payment()
        };
        assert!(fit_payment_model(&snap, &TimeGrid::single(24.0).unwrap(), &opts).is_err());
    }
}
