//! Horvitz–Thompson reserve estimators over the observed payments.
//!
//! Each estimator is a sum of per-payment terms `s_i`; the variance uses
//! `Σ (n s_i - L̂)² / (n (n - 1))` over those same terms.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ReserveError, Result};
use crate::hazard::InclusionProbabilities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReserveKind {
    Ibns,
    Rbns,
    Ibnr,
    Count,
    Cumulative,
    Incremental,
}

impl ReserveKind {
    pub fn label(self) -> &'static str {
        match self {
            ReserveKind::Ibns => "IBNS",
            ReserveKind::Rbns => "RBNS",
            ReserveKind::Ibnr => "IBNR",
            ReserveKind::Count => "COUNT",
            ReserveKind::Cumulative => "CUMULATIVE",
            ReserveKind::Incremental => "INCREMENTAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveEstimate {
    pub kind: ReserveKind,
    pub point: f64,
    /// `None` when fewer than two payments are observed.
    pub variance: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub alpha: f64,
    pub n_paid: usize,
    pub trimmed: bool,
}

impl ReserveEstimate {
    /// Point, variance and interval from per-payment terms.
    pub fn from_terms(kind: ReserveKind, terms: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let point: f64 = terms.iter().sum();
        let variance = match variance_of_terms(terms) {
            Ok(v) => Some(v),
            Err(ReserveError::VarianceUndefined) => None,
            Err(e) => return Err(e),
        };
        let (ci_lower, ci_upper) = match variance {
            Some(v) if point >= 0.0 => {
                let (lo, hi) = confidence_interval(point, v, alpha)?;
                (Some(lo), Some(hi))
            }
            _ => (None, None),
        };
        Ok(ReserveEstimate {
            kind,
            point,
            variance,
            ci_lower,
            ci_upper,
            alpha,
            n_paid: terms.len(),
            trimmed: false,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReserveError::InvalidInput(format!(
            "alpha {alpha} not in (0, 1)"
        )));
    }
    Ok(())
}

fn check_lengths(amounts: &[f64], pi: &[f64]) -> Result<()> {
    if amounts.len() != pi.len() {
        return Err(ReserveError::LengthMismatch(amounts.len(), pi.len()));
    }
    Ok(())
}

fn check_probabilities(pi: &[f64]) -> Result<()> {
    match pi.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        Some(&p) => Err(ReserveError::ProbabilityOutOfRange(p)),
        None => Ok(()),
    }
}

/// `Y_i (1 - π_i) / π_i`.
pub fn ibns_terms(amounts: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    check_lengths(amounts, pi)?;
    check_probabilities(pi)?;
    Ok(amounts
        .iter()
        .zip(pi)
        .map(|(y, p)| y * (1.0 - p) / p)
        .collect())
}

/// `((1 - π^U_i) / π^U_i) · Y_i / π^V_i`.
pub fn ibnr_terms(amounts: &[f64], pi_u: &[f64], pi_v: &[f64]) -> Result<Vec<f64>> {
    check_lengths(amounts, pi_u)?;
    check_lengths(amounts, pi_v)?;
    check_probabilities(pi_u)?;
    check_probabilities(pi_v)?;
    Ok(amounts
        .iter()
        .zip(pi_u.iter().zip(pi_v))
        .map(|(y, (u, v))| (1.0 - u) / u * (y / v))
        .collect())
}

/// Outstanding amount of payments not yet made: `Σ Y_i (1 - π_i) / π_i`.
pub fn ibns_reserve(
    amounts: &[f64],
    probs: &InclusionProbabilities,
    alpha: f64,
) -> Result<ReserveEstimate> {
    ReserveEstimate::from_terms(ReserveKind::Ibns, &ibns_terms(amounts, &probs.pi)?, alpha)
}

/// Estimated population total `Σ Y_i / π_i`.
pub fn ultimate_estimate(amounts: &[f64], probs: &InclusionProbabilities) -> Result<f64> {
    check_lengths(amounts, &probs.pi)?;
    check_probabilities(&probs.pi)?;
    Ok(amounts.iter().zip(&probs.pi).map(|(y, p)| y / p).sum())
}

/// Estimated number of outstanding payments `Σ (1 - π_i) / π_i`.
pub fn outstanding_count(probs: &InclusionProbabilities, alpha: f64) -> Result<ReserveEstimate> {
    let ones = vec![1.0; probs.pi.len()];
    ReserveEstimate::from_terms(ReserveKind::Count, &ibns_terms(&ones, &probs.pi)?, alpha)
}

/// Outstanding amount on reported claims: `Σ Y_i (1 - π^V_i) / π^V_i`.
pub fn rbns_reserve(
    amounts: &[f64],
    probs: &InclusionProbabilities,
    alpha: f64,
) -> Result<ReserveEstimate> {
    ReserveEstimate::from_terms(ReserveKind::Rbns, &ibns_terms(amounts, &probs.pi_v)?, alpha)
}

/// Outstanding amount on claims not yet reported.
pub fn ibnr_reserve(
    amounts: &[f64],
    probs: &InclusionProbabilities,
    alpha: f64,
) -> Result<ReserveEstimate> {
    let terms = ibnr_terms(amounts, &probs.pi_u, &probs.pi_v)?;
    ReserveEstimate::from_terms(ReserveKind::Ibnr, &terms, alpha)
}

fn check_curves(at_tau: &[f64], later: &[f64]) -> Result<()> {
    check_probabilities(at_tau)?;
    check_probabilities(later)?;
    for (k, (a, b)) in at_tau.iter().zip(later).enumerate() {
        if b < a {
            return Err(ReserveError::InconsistentCurves(format!(
                "payment {k}: probability {b} at the later time is below {a} at the valuation time"
            )));
        }
    }
    Ok(())
}

/// `Y_i π_i(t) / π_i(τ)`.
pub fn cumulative_terms(amounts: &[f64], at_tau: &[f64], at_t: &[f64]) -> Result<Vec<f64>> {
    check_lengths(amounts, at_tau)?;
    check_lengths(amounts, at_t)?;
    check_curves(at_tau, at_t)?;
    Ok(amounts
        .iter()
        .zip(at_tau.iter().zip(at_t))
        .map(|(y, (p0, p))| y * p / p0)
        .collect())
}

/// Estimated amount paid by time `t ≥ τ`.
pub fn cumulative_estimate(amounts: &[f64], at_tau: &[f64], at_t: &[f64]) -> Result<f64> {
    Ok(cumulative_terms(amounts, at_tau, at_t)?.iter().sum())
}

/// `Y_i (π_i(t2) - π_i(t1)) / π_i(τ)`.
pub fn incremental_terms(
    amounts: &[f64],
    at_tau: &[f64],
    at_t1: &[f64],
    at_t2: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(amounts, at_tau)?;
    check_lengths(amounts, at_t1)?;
    check_lengths(amounts, at_t2)?;
    check_curves(at_tau, at_t1)?;
    check_curves(at_t1, at_t2)?;
    Ok(amounts
        .iter()
        .zip(at_tau)
        .zip(at_t1.iter().zip(at_t2))
        .map(|((y, p0), (p1, p2))| y * (p2 - p1) / p0)
        .collect())
}

/// Estimated amount paid in `(t1, t2]`, with `τ ≤ t1 ≤ t2`.
pub fn incremental_estimate(
    amounts: &[f64],
    at_tau: &[f64],
    at_t1: &[f64],
    at_t2: &[f64],
) -> Result<f64> {
    Ok(incremental_terms(amounts, at_tau, at_t1, at_t2)?
        .iter()
        .sum())
}

/// Simplified variance of `Σ s_i`, treating the terms as an i.i.d. sample.
pub fn variance_of_terms(terms: &[f64]) -> Result<f64> {
    let n = terms.len();
    if n < 2 {
        return Err(ReserveError::VarianceUndefined);
    }
    let nf = n as f64;
    let total: f64 = terms.iter().sum();
    let ss: f64 = terms.iter().map(|s| (nf * s - total).powi(2)).sum();
    Ok(ss / (nf * (nf - 1.0)))
}

/// Variance of the IBNS estimator.
pub fn variance_estimate(amounts: &[f64], probs: &InclusionProbabilities) -> Result<f64> {
    variance_of_terms(&ibns_terms(amounts, &probs.pi)?)
}

/// Log-scale interval `exp(log P ∓ z √V / P)`; a zero point gives `[0, 0]`.
pub fn confidence_interval(point: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if !(variance >= 0.0) || !point.is_finite() {
        return Err(ReserveError::InvalidInput(format!(
            "interval needs a finite point and variance >= 0 (point {point}, variance {variance})"
        )));
    }
    if point < 0.0 {
        return Err(ReserveError::InvalidInput(format!(
            "log-scale interval undefined for point {point}"
        )));
    }
    if point == 0.0 {
        return Ok((0.0, 0.0));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let half = z * variance.sqrt() / point;
    Ok((point * (-half).exp(), point * half.exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimmedProbabilities {
    pub original: Vec<f64>,
    pub trimmed: Vec<f64>,
    pub n_modified: usize,
}

/// Raises the `j - 1` smallest probabilities to `π_(j)`, where `j` is the
/// largest rank with `π_(j) ≤ 1/(j+1)` and `π_(j+1) > 1/(j+2)`, taking
/// `π_(N+1) = 1`. Ties keep their original order.
pub fn trim_probabilities(probs: &[f64]) -> TrimmedProbabilities {
    let n = probs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
    let next = |j: usize| if j < n { sorted[j] } else { 1.0 };
    // j is 1-based; sorted[j - 1] is π_(j)
    let fire = (1..=n)
        .rev()
        .find(|&j| sorted[j - 1] <= 1.0 / (j as f64 + 1.0) && next(j) > 1.0 / (j as f64 + 2.0));
    let mut trimmed = probs.to_vec();
    if let Some(j) = fire {
        let level = sorted[j - 1];
        for &i in &order[..j - 1] {
            trimmed[i] = level;
        }
    }
    let n_modified = trimmed.iter().zip(probs).filter(|(a, b)| a != b).count();
    TrimmedProbabilities {
        original: probs.to_vec(),
        trimmed,
        n_modified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn probs(pi_u: Vec<f64>, pi_v: Vec<f64>) -> InclusionProbabilities {
        let rows = (0..pi_u.len()).collect();
        InclusionProbabilities::from_components(1.0, 1.0, rows, pi_u, pi_v, 1e-12).unwrap()
    }

    fn flat(pi: Vec<f64>) -> InclusionProbabilities {
        let n = pi.len();
        probs(pi, vec![1.0; n])
    }

    #[test]
    fn ibns_examples() {
        assert_eq!(
            ibns_reserve(&[10.0, 20.0], &flat(vec![1.0, 1.0]), 0.05)
                .unwrap()
                .point,
            0.0
        );
        assert_eq!(
            ibns_reserve(&[100.0], &flat(vec![0.5]), 0.05)
                .unwrap()
                .point,
            100.0
        );
        let r = ibns_reserve(&[200.0, 50.0], &flat(vec![0.8, 0.25]), 0.05).unwrap();
        assert_relative_eq!(r.point, 200.0 * 0.25 + 50.0 * 3.0, max_relative = 1e-15);
        assert_eq!(r.n_paid, 2);
    }

    #[test]
    fn ultimate_examples() {
        assert_eq!(
            ultimate_estimate(&[100.0, 50.0], &flat(vec![1.0, 1.0])).unwrap(),
            150.0
        );
        assert_eq!(
            ultimate_estimate(&[100.0], &flat(vec![0.5])).unwrap(),
            200.0
        );
        let p = flat(vec![0.8, 0.25]);
        let u = ultimate_estimate(&[200.0, 50.0], &p).unwrap();
        assert_relative_eq!(u, 450.0, max_relative = 1e-15);
        let ibns = ibns_reserve(&[200.0, 50.0], &p, 0.05).unwrap().point;
        assert_relative_eq!(u, 250.0 + ibns, max_relative = 1e-15);
    }

    #[test]
    fn count_examples() {
        assert_eq!(
            outstanding_count(&flat(vec![1.0; 3]), 0.05).unwrap().point,
            0.0
        );
        assert_eq!(
            outstanding_count(&flat(vec![0.5]), 0.05).unwrap().point,
            1.0
        );
        let c = outstanding_count(&flat(vec![0.25, 0.8]), 0.05)
            .unwrap()
            .point;
        assert_relative_eq!(c, 3.25, max_relative = 1e-15);
    }

    #[test]
    fn rbns_and_ibnr_examples() {
        assert_eq!(
            rbns_reserve(&[5.0], &probs(vec![0.3], vec![1.0]), 0.05)
                .unwrap()
                .point,
            0.0
        );
        let r = rbns_reserve(&[80.0], &probs(vec![1.0], vec![0.8]), 0.05)
            .unwrap()
            .point;
        assert_relative_eq!(r, 20.0, max_relative = 1e-14);
        let r = rbns_reserve(&[80.0, 30.0], &probs(vec![1.0, 1.0], vec![0.8, 0.5]), 0.05)
            .unwrap()
            .point;
        assert_relative_eq!(r, 50.0, max_relative = 1e-14);
        let i = ibnr_reserve(&[80.0, 3.0], &probs(vec![1.0, 1.0], vec![0.8, 0.1]), 0.05)
            .unwrap()
            .point;
        assert_eq!(i, 0.0);
        let i = ibnr_reserve(&[80.0], &probs(vec![0.5], vec![0.8]), 0.05)
            .unwrap()
            .point;
        assert_relative_eq!(i, 100.0, max_relative = 1e-14);
    }

    #[test]
    fn input_errors() {
        let p = flat(vec![0.5]);
        assert!(matches!(
            ibns_reserve(&[1.0, 2.0], &p, 0.05),
            Err(ReserveError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            ibns_terms(&[1.0], &[0.0]),
            Err(ReserveError::ProbabilityOutOfRange(_))
        ));
        assert!(matches!(
            ibns_terms(&[1.0], &[1.5]),
            Err(ReserveError::ProbabilityOutOfRange(_))
        ));
        assert!(ibns_reserve(&[1.0], &p, 1.0).is_err());
    }

    #[test]
    fn cumulative_examples() {
        let y = [100.0, 40.0];
        let tau = [0.5, 0.2];
        assert_eq!(cumulative_estimate(&y, &tau, &tau).unwrap(), 140.0);
        let full = cumulative_estimate(&y, &tau, &[1.0, 1.0]).unwrap();
        assert_relative_eq!(
            full,
            ultimate_estimate(&y, &flat(tau.to_vec())).unwrap(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            cumulative_estimate(&[100.0], &[0.5], &[0.75]).unwrap(),
            150.0,
            max_relative = 1e-15
        );
        let err = cumulative_estimate(&[100.0], &[0.5], &[0.4]).unwrap_err();
        assert!(err
            .to_string()
            .starts_with("inconsistent probability curves"));
    }

    #[test]
    fn incremental_examples() {
        assert_eq!(
            incremental_estimate(&[100.0], &[0.5], &[0.7], &[0.7]).unwrap(),
            0.0
        );
        let v = incremental_estimate(&[100.0], &[0.5], &[0.6], &[0.9]).unwrap();
        assert_relative_eq!(v, 60.0, max_relative = 1e-14);
        assert!(incremental_estimate(&[100.0], &[0.5], &[0.9], &[0.6]).is_err());
    }

    #[test]
    fn variance_examples() {
        let v = variance_estimate(&[100.0, 100.0], &flat(vec![0.5, 0.5])).unwrap();
        assert_eq!(v, 0.0);
        assert!(matches!(
            variance_estimate(&[100.0], &flat(vec![0.5])),
            Err(ReserveError::VarianceUndefined)
        ));
        let v = variance_estimate(&[200.0, 50.0], &flat(vec![0.8, 0.25])).unwrap();
        assert_relative_eq!(v, 10_000.0, max_relative = 1e-12);
        // a single payment still yields a point estimate
        let r = ibns_reserve(&[100.0], &flat(vec![0.5]), 0.05).unwrap();
        assert_eq!((r.variance, r.ci_lower), (None, None));
    }

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(42.0, 0.0, 0.05).unwrap(), (42.0, 42.0));
        let (lo, hi) = confidence_interval(100.0, 25.0, 0.05).unwrap();
        let z = 1.959963984540054;
        assert_relative_eq!(lo, 100.0 * (-z * 0.05f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(hi, 100.0 * (z * 0.05f64).exp(), max_relative = 1e-12);
        assert!((lo - 90.665).abs() < 1e-3 && (hi - 110.296).abs() < 1e-3);
        assert_eq!(confidence_interval(0.0, 5.0, 0.05).unwrap(), (0.0, 0.0));
        assert!(confidence_interval(-1.0, 5.0, 0.05).is_err());
    }

    #[test]
    fn trimming_hand_traces() {
        let t = trim_probabilities(&[0.05, 0.2, 0.9]);
        assert_eq!(t.trimmed, vec![0.2, 0.2, 0.9]);
        assert_eq!(t.n_modified, 1);
        let t = trim_probabilities(&[0.6, 0.7]);
        assert_eq!(t.trimmed, vec![0.6, 0.7]);
        assert_eq!(t.n_modified, 0);
        let t = trim_probabilities(&[0.3]);
        assert_eq!(t.trimmed, vec![0.3]);
        // original order is restored
        let t = trim_probabilities(&[0.9, 0.2, 0.05]);
        assert_eq!(t.trimmed, vec![0.9, 0.2, 0.2]);
        assert!(trim_probabilities(&[]).trimmed.is_empty());
    }

    fn prob() -> impl Strategy<Value = f64> {
        prop_oneof![0.001f64..=1.0, Just(1.0)]
    }

    proptest! {
        #[test]
        fn ibns_splits_into_rbns_and_ibnr(
            rows in proptest::collection::vec((0.0f64..1e4, prob(), prob()), 2..50)
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let p = probs(rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect());
            let ibns = ibns_reserve(&y, &p, 0.05).unwrap().point;
            let split = rbns_reserve(&y, &p, 0.05).unwrap().point + ibnr_reserve(&y, &p, 0.05).unwrap().point;
            prop_assert!((ibns - split).abs() <= 1e-12 * ibns.abs().max(1.0));
        }

        #[test]
        fn raising_a_probability_lowers_ibns(
            rows in proptest::collection::vec((0.1f64..1e3, 0.01f64..0.99), 1..30),
            k in any::<prop::sample::Index>(),
            bump in 0.001f64..1.0,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let pi: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let k = k.index(pi.len());
            let mut raised = pi.clone();
            raised[k] = (pi[k] + bump * (1.0 - pi[k])).min(1.0);
            prop_assume!(raised[k] > pi[k]);
            let before: f64 = ibns_terms(&y, &pi).unwrap().iter().sum();
            let after: f64 = ibns_terms(&y, &raised).unwrap().iter().sum();
            prop_assert!(after < before);
        }

        #[test]
        fn trimming_only_raises(pi in proptest::collection::vec(0.0005f64..=1.0, 0..60)) {
            let t = trim_probabilities(&pi);
            let mut a = t.original.clone();
            let mut b = t.trimmed.clone();
            for (o, n) in pi.iter().zip(&t.trimmed) {
                prop_assert!(n >= o);
            }
            let y = vec![1.0; pi.len()];
            let raw: f64 = ibns_terms(&y, &pi).unwrap().iter().sum();
            let trimmed: f64 = ibns_terms(&y, &t.trimmed).unwrap().iter().sum();
            prop_assert!(trimmed <= raw);
            // only values below the trimming level change, and they all become it
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(t.n_modified, pi.iter().zip(&t.trimmed).filter(|(o, n)| o != n).count());
            prop_assert!(b.iter().zip(&a).all(|(x, y)| x >= y));
        }

        #[test]
        fn increments_telescope(
            rows in proptest::collection::vec((0.0f64..1e4, 0.01f64..1.0), 1..40),
            cuts in proptest::collection::vec(0.0f64..1.0, 1..8),
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let tau: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let mut cuts = cuts;
            cuts.sort_by(f64::total_cmp);
            // curve at fraction c of the way from π(τ) to 1; the last level is 1
            let level = |c: f64| tau.iter().map(|p| p + c * (1.0 - p)).collect::<Vec<f64>>();
            let mut levels = vec![tau.clone()];
            levels.extend(cuts.iter().map(|&c| level(c)));
            levels.push(vec![1.0; tau.len()]);
            let mut sum = 0.0;
            for w in levels.windows(2) {
                let inc = incremental_estimate(&y, &tau, &w[0], &w[1]).unwrap();
                let diff = cumulative_estimate(&y, &tau, &w[1]).unwrap() - cumulative_estimate(&y, &tau, &w[0]).unwrap();
                prop_assert!((inc - diff).abs() <= 1e-10 * inc.abs().max(diff.abs()).max(1.0));
                sum += inc;
            }
            let target = ultimate_estimate(&y, &flat(tau.clone())).unwrap() - y.iter().sum::<f64>();
            prop_assert!((sum - target).abs() <= 1e-10 * target.abs().max(1.0));
        }

        #[test]
        fn interval_brackets_point(point in 1e-3f64..1e6, cv in 0.0f64..2.0) {
            let var = (cv * point).powi(2);
            let (lo, hi) = confidence_interval(point, var, 0.05).unwrap();
            prop_assert!(lo > 0.0 && lo <= point && point <= hi);
            prop_assert!(((hi / point) / (point / lo) - 1.0).abs() < 1e-12);
        }
    }
}
