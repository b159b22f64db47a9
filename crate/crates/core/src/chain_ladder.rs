//! Run-off triangles and chain-ladder development.
//!
//! A payment with accident time in origin bin `[s, s + w)` sits at development
//! position `D = W - s`. Development column `d` (cut `t_d`) accumulates the
//! payments with `D < t_d`, and is observed at `τ` iff `s + t_d ≤ τ`. Every
//! payment counted in an observed cell therefore has `W ≤ τ`.

use serde::{Deserialize, Serialize};

use crate::data::ObservedSnapshot;
use crate::error::{ReserveError, Result};
use crate::estimators::cumulative_estimate;

/// Relative slack when comparing calendar times built from sums of widths.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriangleMeasure {
    /// Paid amounts.
    Amount,
    /// Number of payments.
    Count,
    /// Number of reported claims, positioned at their reporting time.
    ReportedClaims,
}

/// Per-payment weights `γ` for the empirical development factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorWeights {
    /// `γ = Y`.
    Amount,
    /// `γ = 1`.
    Unit,
    /// `γ = Y²`.
    AmountSquared,
}

impl FactorWeights {
    pub fn name(self) -> &'static str {
        match self {
            FactorWeights::Amount => "amount",
            FactorWeights::Unit => "unit",
            FactorWeights::AmountSquared => "amount-squared",
        }
    }

    fn weight(self, amount: f64) -> f64 {
        match self {
            FactorWeights::Amount => amount,
            FactorWeights::Unit => 1.0,
            FactorWeights::AmountSquared => amount * amount,
        }
    }
}

/// Origin bins and development cuts shared by the triangle and the
/// payment-level factor estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleLayout {
    pub valuation_time: f64,
    /// `s_0 < s_1 < ... < s_k`; row `o` is `[s_o, s_{o+1})`.
    pub origin_cuts: Vec<f64>,
    /// `0 = t_0 < t_1 < ... < t_m`; column `d` (1-based) is cut `t_d`.
    pub dev_cuts: Vec<f64>,
}

impl TriangleLayout {
    /// Rows cover every origin bin starting before `τ`, from the bin of the
    /// earliest accident; columns run to the first multiple of `dev_width`
    /// at or beyond `2ω + origin_width`, the largest possible position.
    pub fn new(snapshot: &ObservedSnapshot<'_>, origin_width: f64, dev_width: f64) -> Result<Self> {
        if !(origin_width > 0.0 && dev_width > 0.0)
            || !origin_width.is_finite()
            || !dev_width.is_finite()
        {
            return Err(ReserveError::InvalidInput(
                "triangle widths must be positive".into(),
            ));
        }
        let tau = snapshot.valuation_time();
        let portfolio = snapshot.portfolio();
        let first = portfolio
            .claims()
            .iter()
            .map(|c| c.accident_time)
            .filter(|&t| t <= tau)
            .fold(f64::INFINITY, f64::min);
        let first_bin = if first.is_finite() {
            (first / origin_width).floor()
        } else {
            0.0
        };
        let mut origin_cuts = vec![first_bin * origin_width];
        let mut k = 1.0;
        while origin_cuts.last().is_some_and(|&s| s < tau) {
            origin_cuts.push((first_bin + k) * origin_width);
            k += 1.0;
        }
        if origin_cuts.len() == 1 {
            origin_cuts.clear();
        }
        let reach = 2.0 * portfolio.max_settlement() + origin_width;
        let m = ((reach / dev_width) * (1.0 - TIME_EPS)).ceil().max(1.0) as usize;
        let dev_cuts = (0..=m).map(|d| d as f64 * dev_width).collect();
        Ok(TriangleLayout {
            valuation_time: tau,
            origin_cuts,
            dev_cuts,
        })
    }

    pub fn n_origins(&self) -> usize {
        self.origin_cuts.len().saturating_sub(1)
    }

    /// Number of development columns `m`.
    pub fn n_dev(&self) -> usize {
        self.dev_cuts.len() - 1
    }

    pub fn origin_start(&self, o: usize) -> f64 {
        self.origin_cuts[o]
    }

    /// Origin row of accident time `t`, if it falls inside the layout.
    pub fn origin_of(&self, t: f64) -> Option<usize> {
        let k = self.origin_cuts.partition_point(|&s| s <= t);
        (k >= 1 && k < self.origin_cuts.len()).then(|| k - 1)
    }

    /// First column `d` (1-based) with `D < t_d`.
    pub fn column_of(&self, position: f64) -> usize {
        self.dev_cuts.partition_point(|&c| c <= position).max(1)
    }

    /// Whether cell `(o, d)` is known at the valuation time.
    pub fn observed(&self, o: usize, d: usize) -> bool {
        let end = self.origin_cuts[o] + self.dev_cuts[d];
        end <= self.valuation_time + TIME_EPS * self.valuation_time.abs().max(1.0)
    }

    /// Last observed column of row `o`, if any.
    pub fn latest(&self, o: usize) -> Option<usize> {
        (1..=self.n_dev()).rev().find(|&d| self.observed(o, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunoffTriangle {
    pub layout: TriangleLayout,
    pub measure: TriangleMeasure,
    /// `cells[o][d - 1]`: cumulative value at column `d`; zero where unobserved.
    pub cells: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

impl RunoffTriangle {
    pub fn n_origins(&self) -> usize {
        self.cells.len()
    }

    pub fn n_dev(&self) -> usize {
        self.layout.n_dev()
    }

    pub fn get(&self, o: usize, d: usize) -> Option<f64> {
        self.mask[o][d - 1].then(|| self.cells[o][d - 1])
    }

    /// Latest observed column and value of row `o`.
    pub fn latest(&self, o: usize) -> Option<(usize, f64)> {
        let d = self.mask[o].iter().rposition(|&m| m)? + 1;
        Some((d, self.cells[o][d - 1]))
    }

    /// Per-period increments of the observed cells.
    pub fn incremental(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n_origins())
            .map(|o| {
                (1..=self.n_dev())
                    .map(|d| {
                        let prev = if d == 1 {
                            Some(0.0)
                        } else {
                            self.get(o, d - 1)
                        };
                        Some(self.get(o, d)? - prev?)
                    })
                    .collect()
            })
            .collect()
    }

    /// Individual link ratios `C[o][d] / C[o][d-1]` per origin row.
    pub fn link_ratios(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n_origins())
            .map(|o| {
                (2..=self.n_dev())
                    .map(|d| {
                        let (a, b) = (self.get(o, d - 1)?, self.get(o, d)?);
                        (a > 0.0).then(|| b / a)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Aggregates a snapshot into a cumulative triangle.
pub fn build_triangle(
    snapshot: &ObservedSnapshot<'_>,
    origin_width: f64,
    dev_width: f64,
    measure: TriangleMeasure,
) -> Result<RunoffTriangle> {
    let layout = TriangleLayout::new(snapshot, origin_width, dev_width)?;
    Ok(triangle_on(snapshot, &layout, measure))
}

/// Aggregates a snapshot into a cumulative triangle with a given layout.
pub fn triangle_on(
    snapshot: &ObservedSnapshot<'_>,
    layout: &TriangleLayout,
    measure: TriangleMeasure,
) -> RunoffTriangle {
    let rows = layout.n_origins();
    let m = layout.n_dev();
    let mut increments = vec![vec![0.0; m]; rows];
    let mut add = |accident: f64, event: f64, value: f64| {
        if let Some(o) = layout.origin_of(accident) {
            let d = layout.column_of(event - layout.origin_start(o));
            if d <= m {
                increments[o][d - 1] += value;
            }
        }
    };
    match measure {
        TriangleMeasure::Amount | TriangleMeasure::Count => {
            for p in snapshot.payments() {
                let v = if measure == TriangleMeasure::Amount {
                    p.amount
                } else {
                    1.0
                };
                add(p.accident_time, p.payment_time, v);
            }
        }
        TriangleMeasure::ReportedClaims => {
            let claims = snapshot.portfolio().claims();
            for &c in snapshot.reported_claims() {
                add(claims[c].accident_time, claims[c].reporting_time, 1.0);
            }
        }
    }
    let mut cells = vec![vec![0.0; m]; rows];
    let mut mask = vec![vec![false; m]; rows];
    for o in 0..rows {
        let mut acc = 0.0;
        for d in 1..=m {
            acc += increments[o][d - 1];
            if layout.observed(o, d) {
                cells[o][d - 1] = acc;
                mask[o][d - 1] = true;
            }
        }
    }
    RunoffTriangle {
        layout: layout.clone(),
        measure,
        cells,
        mask,
    }
}

/// Link ratios between consecutive development columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentFactors {
    /// Column cuts `t_1 < ... < t_m`; `factors[k]` develops `cuts[k]` to `cuts[k + 1]`.
    pub cuts: Vec<f64>,
    pub factors: Vec<f64>,
    pub weight_scheme: FactorWeights,
}

impl DevelopmentFactors {
    pub fn new(cuts: Vec<f64>, factors: Vec<f64>, weight_scheme: FactorWeights) -> Result<Self> {
        if cuts.len() != factors.len() + 1 {
            return Err(ReserveError::InvalidInput(format!(
                "{} factors need {} cuts, got {}",
                factors.len(),
                factors.len() + 1,
                cuts.len()
            )));
        }
        if factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(ReserveError::InvalidInput(
                "development factors must be finite and non-negative".into(),
            ));
        }
        Ok(DevelopmentFactors {
            cuts,
            factors,
            weight_scheme,
        })
    }

    /// `π(t_k)` implied by the factors with `π(t_m) = 1`.
    pub fn probability_curve(&self) -> Vec<f64> {
        let mut curve = vec![1.0; self.cuts.len()];
        for k in (0..self.factors.len()).rev() {
            curve[k] = curve[k + 1] / self.factors[k];
        }
        curve
    }
}

/// Textbook column-sum factors `Σ_o C[o][d] / Σ_o C[o][d-1]` over rows observed at `d`.
pub fn triangle_factors(triangle: &RunoffTriangle) -> Result<DevelopmentFactors> {
    let m = triangle.n_dev();
    let mut factors = Vec::with_capacity(m.saturating_sub(1));
    for d in 2..=m {
        let (mut num, mut den) = (0.0, 0.0);
        for o in 0..triangle.n_origins() {
            if let Some(c) = triangle.get(o, d) {
                num += c;
                den += triangle.cells[o][d - 2];
            }
        }
        if !(den > 0.0) {
            return Err(ReserveError::InsufficientMass(d));
        }
        factors.push(num / den);
    }
    let scheme = match triangle.measure {
        TriangleMeasure::Amount => FactorWeights::Amount,
        TriangleMeasure::Count | TriangleMeasure::ReportedClaims => FactorWeights::Unit,
    };
    DevelopmentFactors::new(triangle.layout.dev_cuts[1..].to_vec(), factors, scheme)
}

/// Payment-level weighted proportions `Σ γ 1(D < t_n) / Σ γ 1(D < t_{n-1})`,
/// pooled over the origin rows observed through `t_n`.
pub fn estimate_factors(
    snapshot: &ObservedSnapshot<'_>,
    layout: &TriangleLayout,
    weights: FactorWeights,
) -> Result<DevelopmentFactors> {
    let m = layout.n_dev();
    // per payment: (latest observed column of its row, column of its position, γ)
    let items: Vec<(usize, usize, f64)> = snapshot
        .payments()
        .iter()
        .filter_map(|p| {
            let o = layout.origin_of(p.accident_time)?;
            let latest = layout.latest(o)?;
            let col = layout.column_of(p.payment_time - layout.origin_start(o));
            Some((latest, col, weights.weight(p.amount)))
        })
        .collect();
    let mut factors = Vec::with_capacity(m.saturating_sub(1));
    for n in 2..=m {
        let (mut num, mut den) = (0.0, 0.0);
        for &(latest, col, g) in &items {
            if latest < n {
                continue;
            }
            if col <= n {
                num += g;
            }
            if col < n {
                den += g;
            }
        }
        if !(den > 0.0) {
            return Err(ReserveError::InsufficientMass(n));
        }
        factors.push(num / den);
    }
    DevelopmentFactors::new(layout.dev_cuts[1..].to_vec(), factors, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClProjection {
    /// Observed cells kept, unobserved cells projected; rows with no observed
    /// cell stay zero.
    pub completed: Vec<Vec<f64>>,
    pub latest: Vec<f64>,
    pub ultimate: Vec<f64>,
    pub reserves: Vec<f64>,
    pub total_reserve: f64,
}

/// Develops each row's latest observed value through the remaining factors.
pub fn cl_project(triangle: &RunoffTriangle, factors: &DevelopmentFactors) -> Result<ClProjection> {
    let m = triangle.n_dev();
    if factors.factors.len() + 1 != m {
        return Err(ReserveError::InvalidInput(format!(
            "{} factors for a triangle with {m} development columns",
            factors.factors.len()
        )));
    }
    let rows = triangle.n_origins();
    let mut completed = triangle.cells.clone();
    let mut latest = vec![0.0; rows];
    let mut ultimate = vec![0.0; rows];
    let mut reserves = vec![0.0; rows];
    for o in 0..rows {
        let Some((k, c)) = triangle.latest(o) else {
            continue;
        };
        let mut value = c;
        for d in k + 1..=m {
            value *= factors.factors[d - 2];
            completed[o][d - 1] = value;
        }
        latest[o] = c;
        ultimate[o] = value;
        reserves[o] = value - c;
    }
    let total_reserve = reserves.iter().sum();
    Ok(ClProjection {
        completed,
        latest,
        ultimate,
        reserves,
        total_reserve,
    })
}

/// Completes the triangle with payment-level IPW estimates: row `o` at latest
/// column `k` gets `Σ γ_i π(t_d) / π(t_k)` over its payments with `D < t_k`,
/// with `π` the curve implied by `factors`.
pub fn ipw_project(
    snapshot: &ObservedSnapshot<'_>,
    layout: &TriangleLayout,
    factors: &DevelopmentFactors,
    measure: TriangleMeasure,
) -> Result<ClProjection> {
    let m = layout.n_dev();
    if factors.factors.len() + 1 != m {
        return Err(ReserveError::InvalidInput(format!(
            "{} factors for a layout with {m} development columns",
            factors.factors.len()
        )));
    }
    if measure == TriangleMeasure::ReportedClaims {
        return Err(ReserveError::InvalidInput(
            "payment-level projection needs a payment measure".into(),
        ));
    }
    let curve = factors.probability_curve();
    let rows = layout.n_origins();
    // per row: (column, value) of every payment
    let mut members: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    for p in snapshot.payments() {
        if let Some(o) = layout.origin_of(p.accident_time) {
            let col = layout.column_of(p.payment_time - layout.origin_start(o));
            let v = if measure == TriangleMeasure::Amount {
                p.amount
            } else {
                1.0
            };
            members[o].push((col, v));
        }
    }
    let mut completed = vec![vec![0.0; m]; rows];
    let mut latest = vec![0.0; rows];
    let mut ultimate = vec![0.0; rows];
    let mut reserves = vec![0.0; rows];
    for o in 0..rows {
        let Some(k) = layout.latest(o) else { continue };
        for d in 1..=k {
            completed[o][d - 1] = members[o]
                .iter()
                .filter(|(c, _)| *c <= d)
                .map(|(_, v)| v)
                .sum();
        }
        let amounts: Vec<f64> = members[o]
            .iter()
            .filter(|(c, _)| *c <= k)
            .map(|(_, v)| *v)
            .collect();
        let at_tau = vec![curve[k - 1]; amounts.len()];
        for d in k + 1..=m {
            let at_t = vec![curve[d - 1]; amounts.len()];
            completed[o][d - 1] = cumulative_estimate(&amounts, &at_tau, &at_t)?;
        }
        latest[o] = completed[o][k - 1];
        ultimate[o] = completed[o][m - 1];
        reserves[o] = ultimate[o] - latest[o];
    }
    let total_reserve = reserves.iter().sum();
    Ok(ClProjection {
        completed,
        latest,
        ultimate,
        reserves,
        total_reserve,
    })
}

fn check_curve(curve: &[f64]) -> Result<()> {
    if curve.is_empty() {
        return Err(ReserveError::InvalidInput("empty probability curve".into()));
    }
    for (k, &p) in curve.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ReserveError::ProbabilityOutOfRange(p));
        }
        if k > 0 && p < curve[k - 1] {
            return Err(ReserveError::NonMonotoneCurve(k));
        }
    }
    Ok(())
}

/// `f_n = π(t_n) / π(t_{n-1})`.
pub fn implied_factors_from_probabilities(curve: &[f64]) -> Result<Vec<f64>> {
    check_curve(curve)?;
    Ok(curve.windows(2).map(|w| w[1] / w[0]).collect())
}

/// `f_n = (1 - δ_n α_n)^{-1}` with the reversed-time hazard
/// `α_n = (π(t_n) - π(t_{n-1})) / (δ_n π(t_n))`.
pub fn reverse_hazard_factors(curve: &[f64], cuts: &[f64]) -> Result<Vec<f64>> {
    check_curve(curve)?;
    if cuts.len() != curve.len() || cuts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ReserveError::InvalidInput(
            "reverse-hazard factors need one strictly increasing cut per curve point".into(),
        ));
    }
    Ok(curve
        .windows(2)
        .zip(cuts.windows(2))
        .map(|(p, c)| {
            let delta = c[1] - c[0];
            let alpha = (p[1] - p[0]) / (delta * p[1]);
            1.0 / (1.0 - delta * alpha)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleCl {
    /// `N^P / π^U`.
    pub n_hat: f64,
    /// `π(t2) - π(t1)`.
    pub share: f64,
    /// `Σ (Y / π^V) / N^P`.
    pub mean_amount: f64,
    pub value: f64,
}

/// Homogeneous decomposition of the payments expected in `(t1, t2]` into a
/// claim count, a development share and an average amount.
pub fn double_cl_decomposition(
    amounts: &[f64],
    pi_u: f64,
    pi_v: f64,
    pi_t1: f64,
    pi_t2: f64,
) -> Result<DoubleCl> {
    if amounts.is_empty() {
        return Err(ReserveError::NoPayments);
    }
    check_curve(&[pi_u])?;
    check_curve(&[pi_v])?;
    check_curve(&[pi_t1, pi_t2])?;
    let n = amounts.len() as f64;
    let n_hat = n / pi_u;
    let share = pi_t2 - pi_t1;
    let mean_amount = amounts.iter().map(|y| y / pi_v).sum::<f64>() / n;
    Ok(DoubleCl {
        n_hat,
        share,
        mean_amount,
        value: n_hat * share * mean_amount,
    })
}

/// Chain-ladder outstanding amounts split by reporting status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClSplit {
    pub ibns: f64,
    pub rbns: f64,
    pub ibnr: f64,
    /// Row-level development probabilities of paid amounts and of reported claims.
    pub pi: Vec<f64>,
    pub pi_u: Vec<f64>,
}

/// Paid-amount chain ladder for the total, with the reported-claim-count
/// chain ladder separating the unreported share.
///
/// Row `o` at latest column `k` has `π_o = π̂(t_k)` from the paid factors and
/// `π^U_o = π̂_R(t_k)` from the reported-claim factors; its RBNS part uses
/// `π^V_o = min(1, π_o / π^U_o)`.
pub fn cl_split(snapshot: &ObservedSnapshot<'_>, layout: &TriangleLayout) -> Result<ClSplit> {
    let paid = triangle_on(snapshot, layout, TriangleMeasure::Amount);
    let reported = triangle_on(snapshot, layout, TriangleMeasure::ReportedClaims);
    let curve = triangle_factors(&paid)?.probability_curve();
    let curve_u = triangle_factors(&reported)?.probability_curve();
    let rows = paid.n_origins();
    let (mut ibns, mut rbns) = (0.0, 0.0);
    let mut pi = vec![1.0; rows];
    let mut pi_u = vec![1.0; rows];
    for o in 0..rows {
        let Some((k, c)) = paid.latest(o) else {
            continue;
        };
        pi[o] = curve[k - 1];
        pi_u[o] = curve_u[k - 1];
        let pv = (pi[o] / pi_u[o]).min(1.0);
        ibns += c * (1.0 / pi[o] - 1.0);
        rbns += c * (1.0 / pv - 1.0);
    }
    Ok(ClSplit {
        ibns,
        rbns,
        ibnr: ibns - rbns,
        pi,
        pi_u,
    })
}
