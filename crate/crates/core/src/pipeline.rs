//! End-to-end runs: fitting at each valuation date, inclusion probabilities,
//! reserves, and comparison with the chain ladder and with known truth.
//!
//! Independent valuation dates run in parallel; results are always returned
//! in the order the dates were given.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::chain_ladder::{
    cl_project, cl_split, estimate_factors, ipw_project, triangle_factors, triangle_on,
    ClProjection, DevelopmentFactors, FactorWeights, RunoffTriangle, TriangleLayout,
    TriangleMeasure,
};
use crate::data::{load_portfolio, paid_amount, snapshot, ObservedSnapshot, Portfolio};
use crate::error::{ReserveError, Result};
use crate::estimators::{ibnr_terms, ibns_terms, trim_probabilities, ReserveEstimate, ReserveKind};
use crate::hazard::{
    compute_inclusion_probabilities_at, fit_payment_model, fit_reporting_model, ks_critical_value,
    ks_statistic, pseudo_residuals, FitDiagnostics, FitOptions, InclusionProbabilities, ModelKind,
    PemModel, TimeGrid, WeightScheme,
};
use crate::simulator::{
    oracle_inclusion, simulate_portfolio, true_reserves, GroundTruth, SimConfig, TrueReserves,
};

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

/// Flat run configuration. Every field has a default, so `{}` parses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub claims: Option<PathBuf>,
    pub payments: Option<PathBuf>,
    /// ω; taken from the simulation config when data are simulated.
    pub max_settlement: Option<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub valuation_times: Vec<f64>,
    pub grid_width: f64,
    /// Explicit grid cuts; overrides `grid_width`.
    pub grid_cuts: Option<Vec<f64>>,
    pub reporting_weights: WeightScheme,
    pub payment_weights: WeightScheme,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub ridge_penalty: f64,
    pub adjust_truncation: bool,
    pub trim: bool,
    /// Relative change in the IBNS point above which the trimmed result is kept.
    pub trim_threshold: f64,
    pub alpha: f64,
    pub probability_floor: f64,
    /// Fit only on accidents in `[τ - rolling_window, τ]`.
    pub rolling_window: Option<f64>,
    pub origin_width: f64,
    pub dev_width: f64,
    pub factor_weights: FactorWeights,
    pub output_dir: PathBuf,
    /// Also write per-payment probabilities and weights.
    pub explain: bool,
    /// Simulation config (JSON); used when no claims file is given.
    pub sim_config: Option<PathBuf>,
    /// Overrides the seed of `sim_config`.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitOptions::payment();
        RunConfig {
            claims: None,
            payments: None,
            max_settlement: None,
            valuation_times: Vec::new(),
            grid_width: 1.0,
            grid_cuts: None,
            reporting_weights: WeightScheme::Amount,
            payment_weights: WeightScheme::Unit,
            max_iterations: fit.max_iterations,
            gradient_tolerance: fit.gradient_tolerance,
            ridge_penalty: fit.ridge_penalty,
            adjust_truncation: fit.adjust_truncation,
            trim: false,
            trim_threshold: 0.03,
            alpha: 0.05,
            probability_floor: crate::hazard::DEFAULT_FLOOR,
            rolling_window: None,
            origin_width: 1.0,
            dev_width: 1.0,
            factor_weights: FactorWeights::Amount,
            output_dir: PathBuf::from("out"),
            explain: false,
            sim_config: None,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| ReserveError::io(path, e))?;
        RunConfig::from_json(&s)
    }

    /// The simulation config named by `sim_config`, with the seed override applied.
    pub fn simulation(&self) -> Result<Option<SimConfig>> {
        let Some(path) = &self.sim_config else {
            return Ok(None);
        };
        let s = std::fs::read_to_string(path).map_err(|e| ReserveError::io(path, e))?;
        let mut cfg: SimConfig = serde_json::from_str(&s)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// Loads the claim and payment files, or simulates when only a simulation
    /// config is given. Simulated populations come with their truth.
    pub fn portfolio(&self) -> Result<(Portfolio, Option<GroundTruth>)> {
        match (&self.claims, &self.payments) {
            (Some(c), Some(p)) => {
                let omega = match (self.max_settlement, self.simulation()?) {
                    (Some(w), _) => w,
                    (None, Some(sim)) => sim.max_settlement,
                    (None, None) => {
                        return Err(ReserveError::InvalidInput(
                            "max_settlement is required".into(),
                        ));
                    }
                };
                Ok((load_portfolio(c, p, omega)?, None))
            }
            (None, None) => match self.simulation()? {
                Some(sim) => {
                    let (pf, truth) = simulate_portfolio(&sim)?;
                    Ok((pf, Some(truth)))
                }
                None => Err(ReserveError::InvalidInput(
                    "config needs claims and payments files or a sim_config".into(),
                )),
            },
            _ => Err(ReserveError::InvalidInput(
                "claims and payments files must be given together".into(),
            )),
        }
    }

    pub fn estimation_options(&self, omega: f64) -> Result<EstimationOptions> {
        let grid = match &self.grid_cuts {
            Some(cuts) => TimeGrid::new(cuts.clone())?,
            None => TimeGrid::uniform(omega, self.grid_width)?,
        };
        let base = FitOptions {
            weight_scheme: WeightScheme::Unit,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            ridge_penalty: self.ridge_penalty,
            adjust_truncation: self.adjust_truncation,
        };
        let options = EstimationOptions {
            grid,
            reporting: base.clone().with_weights(self.reporting_weights),
            payment: base.with_weights(self.payment_weights),
            alpha: self.alpha,
            floor: self.probability_floor,
            trim: self.trim,
            trim_threshold: self.trim_threshold,
            rolling_window: self.rolling_window,
        };
        options.validate(omega)?;
        Ok(options)
    }

    /// Checks the valuation dates against the data: each must lie after the
    /// first accident and within `2ω` of the last recorded event.
    pub fn checked_times(&self, portfolio: &Portfolio) -> Result<Vec<f64>> {
        if self.valuation_times.is_empty() {
            return Err(ReserveError::InvalidInput(
                "no valuation_times given".into(),
            ));
        }
        let first = portfolio
            .claims()
            .iter()
            .map(|c| c.accident_time)
            .fold(f64::INFINITY, f64::min);
        let last = portfolio
            .claims()
            .iter()
            .map(|c| c.reporting_time)
            .chain(portfolio.payments().iter().map(|p| p.payment_time))
            .fold(f64::NEG_INFINITY, f64::max);
        let limit = last + 2.0 * portfolio.max_settlement();
        for &tau in &self.valuation_times {
            if !tau.is_finite() || !(tau > first) || tau > limit {
                return Err(ReserveError::InvalidInput(format!(
                    "valuation time {tau} outside the data horizon ({first}, {limit}]"
                )));
            }
        }
        Ok(self.valuation_times.clone())
    }
}

/// Everything needed to go from a snapshot to reserves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub grid: TimeGrid,
    pub reporting: FitOptions,
    pub payment: FitOptions,
    pub alpha: f64,
    pub floor: f64,
    pub trim: bool,
    pub trim_threshold: f64,
    pub rolling_window: Option<f64>,
}

impl EstimationOptions {
    /// Defaults on a uniform grid of the given width up to `ω`.
    pub fn new(omega: f64, grid_width: f64) -> Result<Self> {
        RunConfig {
            grid_width,
            ..RunConfig::default()
        }
        .estimation_options(omega)
    }

    fn validate(&self, omega: f64) -> Result<()> {
        if (self.grid.horizon() - omega).abs() > 1e-9 * omega {
            return Err(ReserveError::InvalidInput(format!(
                "grid ends at {} but the maximum settlement is {omega}",
                self.grid.horizon()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ReserveError::InvalidInput(format!(
                "alpha {} not in (0, 1)",
                self.alpha
            )));
        }
        if !(self.trim_threshold >= 0.0) {
            return Err(ReserveError::InvalidInput(
                "trim_threshold must be >= 0".into(),
            ));
        }
        if self.rolling_window.is_some_and(|w| !(w > 0.0)) {
            return Err(ReserveError::InvalidInput(
                "rolling_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Both delay models fitted at one valuation date.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModels {
    pub valuation_time: f64,
    /// Earliest accident time used in fitting under a rolling window.
    pub window_start: Option<f64>,
    pub reporting: PemModel,
    pub payment: PemModel,
}

/// Fits the reporting and payment models on `snapshot`, restricted to the
/// rolling window when one is configured.
pub fn fit_models(
    snap: &ObservedSnapshot<'_>,
    options: &EstimationOptions,
) -> Result<FittedModels> {
    let tau = snap.valuation_time();
    let window_start = options.rolling_window.map(|w| tau - w);
    let restricted;
    let fit_snap = match window_start {
        Some(from) => {
            restricted = snap.restrict_accidents_from(from);
            &restricted
        }
        None => snap,
    };
    Ok(FittedModels {
        valuation_time: tau,
        window_start,
        reporting: fit_reporting_model(fit_snap, &options.grid, &options.reporting)?,
        payment: fit_payment_model(fit_snap, &options.grid, &options.payment)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimSummary {
    /// Payments whose `π` was raised.
    pub n_modified: usize,
    /// Payments whose `π^V` was raised.
    pub n_modified_v: usize,
    pub raw_ibns: f64,
    pub trimmed_ibns: f64,
    pub relative_change: f64,
    /// Whether the reported estimates are the trimmed ones.
    pub retained: bool,
    pub pi: Vec<f64>,
    pub pi_v: Vec<f64>,
}

/// Reserves at one valuation date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReserveReport {
    pub valuation_time: f64,
    pub paid: f64,
    /// IBNS, RBNS, IBNR and COUNT, in that order.
    pub estimates: Vec<ReserveEstimate>,
    pub trimming: Option<TrimSummary>,
    pub models: FittedModels,
    pub probabilities: InclusionProbabilities,
}

/// Serializable overview of a [`ReserveReport`] without the per-payment data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveSummary {
    pub valuation_time: f64,
    pub window_start: Option<f64>,
    pub paid: f64,
    pub n_paid: usize,
    pub estimates: Vec<ReserveEstimate>,
    pub probability_floor: f64,
    pub n_floored: usize,
    pub trim_n_modified: Option<usize>,
    pub trim_relative_change: Option<f64>,
    pub trim_retained: bool,
    pub reporting_fit: FitDiagnostics,
    pub payment_fit: FitDiagnostics,
}

impl ReserveReport {
    pub fn estimate(&self, kind: ReserveKind) -> Option<&ReserveEstimate> {
        self.estimates.iter().find(|e| e.kind == kind)
    }

    pub fn summary(&self) -> ReserveSummary {
        ReserveSummary {
            valuation_time: self.valuation_time,
            window_start: self.models.window_start,
            paid: self.paid,
            n_paid: self.probabilities.len(),
            estimates: self.estimates.clone(),
            probability_floor: self.probabilities.floor,
            n_floored: self.probabilities.n_floored,
            trim_n_modified: self.trimming.as_ref().map(|t| t.n_modified),
            trim_relative_change: self.trimming.as_ref().map(|t| t.relative_change),
            trim_retained: self.trimming.as_ref().is_some_and(|t| t.retained),
            reporting_fit: self.models.reporting.diagnostics.clone(),
            payment_fit: self.models.payment.diagnostics.clone(),
        }
    }
}

/// IBNS, RBNS, IBNR and COUNT from per-payment probabilities. IBNR terms are
/// the IBNS terms less the RBNS terms.
fn estimates_from(
    amounts: &[f64],
    pi: &[f64],
    pi_v: &[f64],
    ibnr: Vec<f64>,
    alpha: f64,
) -> Result<Vec<ReserveEstimate>> {
    let ones = vec![1.0; amounts.len()];
    Ok(vec![
        ReserveEstimate::from_terms(ReserveKind::Ibns, &ibns_terms(amounts, pi)?, alpha)?,
        ReserveEstimate::from_terms(ReserveKind::Rbns, &ibns_terms(amounts, pi_v)?, alpha)?,
        ReserveEstimate::from_terms(ReserveKind::Ibnr, &ibnr, alpha)?,
        ReserveEstimate::from_terms(ReserveKind::Count, &ibns_terms(&ones, pi)?, alpha)?,
    ])
}

/// Reserves from given probabilities, with optional trimming of `π` and `π^V`.
pub fn reserves_from_probabilities(
    amounts: &[f64],
    probs: &InclusionProbabilities,
    options: &EstimationOptions,
) -> Result<(Vec<ReserveEstimate>, Option<TrimSummary>)> {
    let raw_ibnr = ibnr_terms(amounts, &probs.pi_u, &probs.pi_v)?;
    let raw = estimates_from(amounts, &probs.pi, &probs.pi_v, raw_ibnr, options.alpha)?;
    if !options.trim {
        return Ok((raw, None));
    }
    let t = trim_probabilities(&probs.pi);
    let tv = trim_probabilities(&probs.pi_v);
    let ibns_t = ibns_terms(amounts, &t.trimmed)?;
    let rbns_t = ibns_terms(amounts, &tv.trimmed)?;
    let ibnr_t = ibns_t.iter().zip(&rbns_t).map(|(a, b)| a - b).collect();
    let mut trimmed = estimates_from(amounts, &t.trimmed, &tv.trimmed, ibnr_t, options.alpha)?;
    let raw_ibns = raw[0].point;
    let trimmed_ibns = trimmed[0].point;
    let relative_change = if raw_ibns != 0.0 {
        (raw_ibns - trimmed_ibns).abs() / raw_ibns.abs()
    } else {
        0.0
    };
    let retained = relative_change > options.trim_threshold;
    let summary = TrimSummary {
        n_modified: t.n_modified,
        n_modified_v: tv.n_modified,
        raw_ibns,
        trimmed_ibns,
        relative_change,
        retained,
        pi: t.trimmed,
        pi_v: tv.trimmed,
    };
    if retained {
        for e in &mut trimmed {
            e.trimmed = true;
        }
        Ok((trimmed, Some(summary)))
    } else {
        Ok((raw, Some(summary)))
    }
}

/// Fits, computes probabilities and reserves at the snapshot's valuation date.
pub fn reserve_snapshot(
    snap: &ObservedSnapshot<'_>,
    options: &EstimationOptions,
) -> Result<ReserveReport> {
    let models = fit_models(snap, options)?;
    reserve_with_models(snap, models, options)
}

/// Reserves at the snapshot's valuation date with already-fitted models.
pub fn reserve_with_models(
    snap: &ObservedSnapshot<'_>,
    models: FittedModels,
    options: &EstimationOptions,
) -> Result<ReserveReport> {
    let tau = snap.valuation_time();
    let probabilities = compute_inclusion_probabilities_at(
        &models.reporting,
        &models.payment,
        snap,
        tau,
        options.floor,
    )?;
    let amounts = snap.amounts();
    let (estimates, trimming) = reserves_from_probabilities(&amounts, &probabilities, options)?;
    Ok(ReserveReport {
        valuation_time: tau,
        paid: paid_amount(snap),
        estimates,
        trimming,
        models,
        probabilities,
    })
}

/// Runs `job` at every valuation date in parallel; results keep the order of
/// `times`, and the first failure in that order is returned.
pub fn per_time<T: Send>(times: &[f64], job: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = times.par_iter().map(|&t| job(t)).collect();
    results.into_iter().collect()
}

/// Reserves for every configured valuation date.
pub fn run_reserve(config: &RunConfig) -> Result<Vec<ReserveReport>> {
    let (pf, _) = config.portfolio()?;
    reserve_portfolio(&pf, config)
}

/// [`run_reserve`] on an already loaded portfolio.
pub fn reserve_portfolio(pf: &Portfolio, config: &RunConfig) -> Result<Vec<ReserveReport>> {
    let times = config.checked_times(pf)?;
    let options = config.estimation_options(pf.max_settlement())?;
    per_time(&times, |tau| reserve_snapshot(&snapshot(pf, tau), &options))
}

/// Chain-ladder IBNS from a projection: projected ultimate less everything
/// paid by `τ`, over rows with at least one observed column.
fn outstanding_from_projection(
    proj: &ClProjection,
    layout: &TriangleLayout,
    snap: &ObservedSnapshot<'_>,
) -> f64 {
    let mut paid = vec![0.0; layout.n_origins()];
    for p in snap.payments() {
        if let Some(o) = layout.origin_of(p.accident_time) {
            paid[o] += p.amount;
        }
    }
    (0..layout.n_origins())
        .filter(|&o| layout.latest(o).is_some())
        .map(|o| proj.ultimate[o] - paid[o])
        .sum()
}

/// One valuation date of a comparison study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub valuation_time: f64,
    pub truth: TrueReserves,
    /// IPW with fitted probabilities.
    pub ipw: ReserveEstimate,
    pub ipw_rbns: f64,
    pub ipw_ibnr: f64,
    /// IPW with the generator's probabilities; simulated data only.
    pub ipw_oracle: Option<f64>,
    /// Paid-amount chain ladder.
    pub cl: f64,
    /// IPW with empirical factor-implied probabilities.
    pub ipw_empirical: f64,
    /// Reported-count split of the chain-ladder total.
    pub cl_split_rbns: f64,
    pub cl_split_ibnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub method: String,
    pub n: usize,
    pub me: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Mean of `|error| / truth` over dates with a positive true reserve.
    pub mape: f64,
}

impl ErrorMetrics {
    pub fn from_pairs(method: &str, pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len();
        let nf = n as f64;
        let errors: Vec<f64> = pairs.iter().map(|(est, truth)| est - truth).collect();
        let relative: Vec<f64> = pairs
            .iter()
            .filter(|(_, truth)| *truth > 0.0)
            .map(|(est, truth)| (est - truth).abs() / truth)
            .collect();
        ErrorMetrics {
            method: method.to_string(),
            n,
            me: errors.iter().sum::<f64>() / nf,
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt(),
            mae: errors.iter().map(|e| e.abs()).sum::<f64>() / nf,
            mape: relative.iter().sum::<f64>() / relative.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// IBNS error metrics per method.
    pub metrics: Vec<ErrorMetrics>,
}

/// IPW, chain ladder and truth at one valuation date.
pub fn compare_at(
    truth: &GroundTruth,
    tau: f64,
    options: &EstimationOptions,
    origin_width: f64,
    dev_width: f64,
    factor_weights: FactorWeights,
) -> Result<CompareRow> {
    let snap = snapshot(&truth.population, tau);
    let report = reserve_snapshot(&snap, options)?;
    let layout = TriangleLayout::new(&snap, origin_width, dev_width)?;
    let paid_triangle = triangle_on(&snap, &layout, TriangleMeasure::Amount);
    let cl = outstanding_from_projection(
        &cl_project(&paid_triangle, &triangle_factors(&paid_triangle)?)?,
        &layout,
        &snap,
    );
    let factors = estimate_factors(&snap, &layout, factor_weights)?;
    let ipw_empirical = outstanding_from_projection(
        &ipw_project(&snap, &layout, &factors, TriangleMeasure::Amount)?,
        &layout,
        &snap,
    );
    let split = cl_split(&snap, &layout)?;
    let ipw_oracle = match &truth.config {
        Some(cfg) => {
            let probs = oracle_inclusion(cfg, &snap, tau, options.floor)?;
            Some(ibns_terms(&snap.amounts(), &probs.pi)?.iter().sum())
        }
        None => None,
    };
    let get = |k| report.estimate(k).map(|e| e.point).unwrap_or(0.0);
    Ok(CompareRow {
        valuation_time: tau,
        truth: true_reserves(truth, tau),
        ipw: report
            .estimate(ReserveKind::Ibns)
            .cloned()
            .expect("IBNS is always estimated"),
        ipw_rbns: get(ReserveKind::Rbns),
        ipw_ibnr: get(ReserveKind::Ibnr),
        ipw_oracle,
        cl,
        ipw_empirical,
        cl_split_rbns: split.rbns,
        cl_split_ibnr: split.ibnr,
    })
}

/// Comparison over all configured valuation dates. The data (or the
/// simulated population) is treated as complete, so truth is read off it.
pub fn run_compare(config: &RunConfig) -> Result<CompareReport> {
    let (pf, truth) = config.portfolio()?;
    let truth = truth.unwrap_or_else(|| GroundTruth::from_population(pf.clone()));
    compare_truth(&truth, config)
}

/// [`run_compare`] against an explicit truth.
pub fn compare_truth(truth: &GroundTruth, config: &RunConfig) -> Result<CompareReport> {
    let times = config.checked_times(&truth.population)?;
    let options = config.estimation_options(truth.population.max_settlement())?;
    let rows = per_time(&times, |tau| {
        compare_at(
            truth,
            tau,
            &options,
            config.origin_width,
            config.dev_width,
            config.factor_weights,
        )
    })?;
    let pairs = |f: &dyn Fn(&CompareRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| f(r).map(|v| (v, r.truth.ibns)))
            .collect()
    };
    let mut metrics = vec![
        ErrorMetrics::from_pairs("ipw", &pairs(&|r| Some(r.ipw.point))),
        ErrorMetrics::from_pairs("cl", &pairs(&|r| Some(r.cl))),
        ErrorMetrics::from_pairs("ipw_empirical", &pairs(&|r| Some(r.ipw_empirical))),
    ];
    if rows.iter().all(|r| r.ipw_oracle.is_some()) {
        metrics.push(ErrorMetrics::from_pairs(
            "ipw_oracle",
            &pairs(&|r| r.ipw_oracle),
        ));
    }
    Ok(CompareReport { rows, metrics })
}

/// Paid, count and reported-claim triangles with their column-sum factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleReport {
    pub valuation_time: f64,
    pub paid: RunoffTriangle,
    pub counts: RunoffTriangle,
    pub reported: RunoffTriangle,
    /// `None` when some development step has no mass.
    pub paid_factors: Option<DevelopmentFactors>,
    pub count_factors: Option<DevelopmentFactors>,
    pub projection: Option<ClProjection>,
}

pub fn triangle_report(
    snap: &ObservedSnapshot<'_>,
    origin_width: f64,
    dev_width: f64,
) -> Result<TriangleReport> {
    let layout = TriangleLayout::new(snap, origin_width, dev_width)?;
    let paid = triangle_on(snap, &layout, TriangleMeasure::Amount);
    let counts = triangle_on(snap, &layout, TriangleMeasure::Count);
    let reported = triangle_on(snap, &layout, TriangleMeasure::ReportedClaims);
    let optional = |r: Result<DevelopmentFactors>| match r {
        Ok(f) => Ok(Some(f)),
        Err(ReserveError::InsufficientMass(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let paid_factors = optional(triangle_factors(&paid))?;
    let count_factors = optional(triangle_factors(&counts))?;
    let projection = paid_factors
        .as_ref()
        .map(|f| cl_project(&paid, f))
        .transpose()?;
    Ok(TriangleReport {
        valuation_time: snap.valuation_time(),
        paid,
        counts,
        reported,
        paid_factors,
        count_factors,
        projection,
    })
}

pub fn run_triangle(config: &RunConfig) -> Result<Vec<TriangleReport>> {
    let (pf, _) = config.portfolio()?;
    let times = config.checked_times(&pf)?;
    per_time(&times, |tau| {
        triangle_report(&snapshot(&pf, tau), config.origin_width, config.dev_width)
    })
}

/// Pseudo-residuals of one fitted model with their KS check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub valuation_time: f64,
    pub model: ModelKind,
    pub residuals: Vec<f64>,
    pub ks_statistic: f64,
    /// 1% critical value for `residuals.len()`.
    pub critical_value: f64,
}

impl ResidualCheck {
    pub fn new(model: &PemModel, snap: &ObservedSnapshot<'_>) -> Self {
        let residuals = pseudo_residuals(model, snap);
        ResidualCheck {
            valuation_time: snap.valuation_time(),
            model: model.kind,
            ks_statistic: ks_statistic(&residuals),
            critical_value: ks_critical_value(residuals.len()),
            residuals,
        }
    }

    pub fn rejected(&self) -> bool {
        self.ks_statistic > self.critical_value
    }
}

pub fn run_fit(config: &RunConfig) -> Result<Vec<FittedModels>> {
    let (pf, _) = config.portfolio()?;
    let times = config.checked_times(&pf)?;
    let options = config.estimation_options(pf.max_settlement())?;
    per_time(&times, |tau| fit_models(&snapshot(&pf, tau), &options))
}

/// Reporting and payment residual checks at every valuation date.
pub fn run_residuals(config: &RunConfig) -> Result<Vec<[ResidualCheck; 2]>> {
    let (pf, _) = config.portfolio()?;
    let times = config.checked_times(&pf)?;
    let options = config.estimation_options(pf.max_settlement())?;
    per_time(&times, |tau| {
        let snap = snapshot(&pf, tau);
        let models = fit_models(&snap, &options)?;
        Ok([
            ResidualCheck::new(&models.reporting, &snap),
            ResidualCheck::new(&models.payment, &snap),
        ])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Claim, Payment};
    use crate::simulator::SimConfig;
    use approx::assert_relative_eq;

    #[test]
    fn config_defaults_and_scalar_time() {
        let c = RunConfig::from_json(r#"{"valuation_times": 36, "trim": true}"#).unwrap();
        assert_eq!(c.valuation_times, vec![36.0]);
        assert!(c.trim);
        assert_eq!(c.trim_threshold, 0.03);
        assert_eq!(c.reporting_weights, WeightScheme::Amount);
        assert_eq!(c.payment_weights, WeightScheme::Unit);
        let c = RunConfig::from_json(r#"{"valuation_times": [30, 36.5]}"#).unwrap();
        assert_eq!(c.valuation_times, vec![30.0, 36.5]);
        assert!(RunConfig::from_json(r#"{"valuation_time": 3}"#).is_err());
    }

    #[test]
    fn grid_must_end_at_omega() {
        let c = RunConfig {
            grid_cuts: Some(vec![0.0, 1.0, 5.0]),
            ..RunConfig::default()
        };
        assert!(c.estimation_options(6.0).is_err());
        assert!(c.estimation_options(5.0).is_ok());
    }

    #[test]
    fn times_outside_horizon_rejected() {
        let claims = vec![Claim {
            claim_id: "a".into(),
            accident_time: 1.0,
            reporting_time: 1.5,
            covariates: vec![],
        }];
        let pays = vec![Payment {
            claim_id: "a".into(),
            payment_time: 2.0,
            amount: 1.0,
        }];
        let pf = Portfolio::new(claims, pays, vec![], 3.0).unwrap();
        let at = |t: f64| RunConfig {
            valuation_times: vec![t],
            ..RunConfig::default()
        };
        assert!(at(0.5).checked_times(&pf).is_err());
        assert!(at(1.0).checked_times(&pf).is_err());
        assert!(at(8.0).checked_times(&pf).is_ok());
        assert!(at(8.5).checked_times(&pf).is_err());
    }

    #[test]
    fn fully_developed_data_have_no_reserve() {
        let cfg = SimConfig::homogeneous(24.0, 20.0, 6.0, 3);
        let (pf, _) = simulate_portfolio(&cfg).unwrap();
        let options = EstimationOptions::new(6.0, 1.0).unwrap();
        let r = reserve_snapshot(&snapshot(&pf, 24.0 + 12.0), &options).unwrap();
        for e in &r.estimates {
            assert_eq!(e.point, 0.0, "{:?}", e.kind);
        }
    }

    #[test]
    fn decomposition_holds_in_reports() {
        let cfg = SimConfig::homogeneous(24.0, 20.0, 6.0, 4);
        let (pf, _) = simulate_portfolio(&cfg).unwrap();
        let options = EstimationOptions::new(6.0, 1.0).unwrap();
        let r = reserve_snapshot(&snapshot(&pf, 20.0), &options).unwrap();
        let p = |k| r.estimate(k).unwrap().point;
        assert_relative_eq!(
            p(ReserveKind::Ibns),
            p(ReserveKind::Rbns) + p(ReserveKind::Ibnr),
            max_relative = 1e-12
        );
        assert!(p(ReserveKind::Ibns) > 0.0);
    }

    #[test]
    fn trimming_kept_only_above_threshold() {
        let probs = InclusionProbabilities::from_components(
            1.0,
            1.0,
            vec![0, 1, 2],
            vec![1.0; 3],
            vec![0.05, 0.2, 0.9],
            1e-6,
        )
        .unwrap();
        let amounts = [10.0, 10.0, 10.0];
        let mut options = EstimationOptions::new(1.0, 1.0).unwrap();
        options.trim = true;
        let (est, t) = reserves_from_probabilities(&amounts, &probs, &options).unwrap();
        let t = t.unwrap();
        assert_eq!(t.pi, vec![0.2, 0.2, 0.9]);
        // raw 190 + 40 + 10/9, trimmed 40 + 40 + 10/9
        assert!(t.retained);
        assert!(est.iter().all(|e| e.trimmed));
        assert_relative_eq!(est[0].point, 80.0 + 10.0 / 9.0, max_relative = 1e-14);
        options.trim_threshold = 0.9;
        let (est, t) = reserves_from_probabilities(&amounts, &probs, &options).unwrap();
        assert!(!t.unwrap().retained);
        assert!(!est[0].trimmed);
        assert_relative_eq!(est[0].point, 230.0 + 10.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn metrics_by_definition() {
        let m = ErrorMetrics::from_pairs("x", &[(110.0, 100.0)]);
        assert_eq!(m.mape, 0.1);
        assert_eq!(m.me, 10.0);
        assert_eq!(m.rmse, 10.0);
        let m = ErrorMetrics::from_pairs("x", &[(90.0, 100.0), (130.0, 100.0)]);
        assert_relative_eq!(m.mape, 0.2, max_relative = 1e-15);
        assert_eq!(m.me, 10.0);
        assert_eq!(m.mae, 20.0);
    }

    #[test]
    fn parallel_order_is_input_order() {
        let out = per_time(&[3.0, 1.0, 2.0], |t| Ok(t * 2.0)).unwrap();
        assert_eq!(out, vec![6.0, 2.0, 4.0]);
        let err = per_time(&[1.0, 2.0, 3.0], |t| {
            if t > 1.5 {
                Err(ReserveError::InvalidInput(format!("{t}")))
            } else {
                Ok(t)
            }
        });
        assert_eq!(
            err.unwrap_err().to_string(),
            ReserveError::InvalidInput("2".into()).to_string()
        );
    }
}
