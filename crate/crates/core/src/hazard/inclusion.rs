use serde::{Deserialize, Serialize};

use super::model::{ModelKind, PemModel};
use crate::data::{Claim, ObservedSnapshot};
use crate::error::{ReserveError, Result};

/// Lower bound applied to every evaluated probability.
pub const DEFAULT_FLOOR: f64 = 1e-6;

fn expect_kind(model: &PemModel, kind: ModelKind) -> Result<()> {
    if model.kind != kind {
        return Err(ReserveError::WrongModelKind {
            expected: kind.name(),
        });
    }
    Ok(())
}

/// `π^U = P(U ≤ τ - T | X)`, equal to 1 once `τ - T ≥ ω`.
pub fn reporting_inclusion_probability(model: &PemModel, claim: &Claim, tau: f64) -> Result<f64> {
    expect_kind(model, ModelKind::ReportingDelay)?;
    if tau < claim.accident_time {
        return Err(ReserveError::ClaimAfterValuation {
            accident_time: claim.accident_time,
            valuation_time: tau,
        });
    }
    let window = tau - claim.accident_time;
    if window >= model.omega() {
        return Ok(1.0);
    }
    Ok(model.event_cdf(window, &model.covariates_for(claim)))
}

/// `π^V = Λ(min(τ - R, ω)) / Λ(ω)`; the covariate factor cancels.
///
/// `claim` supplies the realised reporting delay for the covariate vector, so
/// it must be reported by `τ`.
pub fn payment_inclusion_probability(model: &PemModel, claim: &Claim, tau: f64) -> Result<f64> {
    expect_kind(model, ModelKind::PaymentIntensity)?;
    if tau < claim.reporting_time {
        return Err(ReserveError::ClaimNotReported);
    }
    let window = tau - claim.reporting_time;
    if window >= model.omega() {
        return Ok(1.0);
    }
    let total = model.baseline_cumulative(model.omega());
    if !(total > 0.0) || !total.is_finite() {
        return Err(ReserveError::DegenerateIntensity);
    }
    Ok(model.baseline_cumulative(window) / total)
}

/// Per observed payment inclusion probabilities at one evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbabilities {
    pub valuation_time: f64,
    /// Time at which the probabilities were evaluated (`τ` unless projected).
    pub evaluation_time: f64,
    pub payment_rows: Vec<usize>,
    pub pi_u: Vec<f64>,
    pub pi_v: Vec<f64>,
    pub pi: Vec<f64>,
    pub floor: f64,
    pub n_floored: usize,
}

impl InclusionProbabilities {
    /// Assembles probabilities from per-payment components, applying `floor`
    /// to each component and forming `π = π^U π^V`.
    pub fn from_components(
        valuation_time: f64,
        evaluation_time: f64,
        payment_rows: Vec<usize>,
        mut pi_u: Vec<f64>,
        mut pi_v: Vec<f64>,
        floor: f64,
    ) -> Result<Self> {
        if pi_u.len() != payment_rows.len() {
            return Err(ReserveError::LengthMismatch(payment_rows.len(), pi_u.len()));
        }
        if pi_v.len() != payment_rows.len() {
            return Err(ReserveError::LengthMismatch(payment_rows.len(), pi_v.len()));
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(ReserveError::InvalidInput(format!(
                "probability floor {floor} not in (0, 1]"
            )));
        }
        let mut n_floored = 0;
        for p in pi_u.iter_mut().chain(pi_v.iter_mut()) {
            if !p.is_finite() || *p > 1.0 + 1e-12 {
                return Err(ReserveError::ProbabilityOutOfRange(*p));
            }
            *p = p.min(1.0);
            if *p < floor {
                *p = floor;
                n_floored += 1;
            }
        }
        let pi = pi_u.iter().zip(&pi_v).map(|(u, v)| u * v).collect();
        Ok(InclusionProbabilities {
            valuation_time,
            evaluation_time,
            payment_rows,
            pi_u,
            pi_v,
            pi,
            floor,
            n_floored,
        })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

/// Probabilities for every observed payment of `snapshot` at its valuation time.
pub fn compute_inclusion_probabilities(
    reporting: &PemModel,
    payment: &PemModel,
    snapshot: &ObservedSnapshot<'_>,
) -> Result<InclusionProbabilities> {
    compute_inclusion_probabilities_at(
        reporting,
        payment,
        snapshot,
        snapshot.valuation_time(),
        DEFAULT_FLOOR,
    )
}

/// Probabilities for every observed payment of `snapshot` as of time `t`,
/// i.e. `P(W ≤ t)` for a payment with the same claim history.
pub fn compute_inclusion_probabilities_at(
    reporting: &PemModel,
    payment: &PemModel,
    snapshot: &ObservedSnapshot<'_>,
    t: f64,
    floor: f64,
) -> Result<InclusionProbabilities> {
    let omega = snapshot.portfolio().max_settlement();
    for m in [reporting, payment] {
        if (m.omega() - omega).abs() > 1e-9 * omega {
            return Err(ReserveError::InvalidInput(format!(
                "model grid ends at {} but the portfolio's maximum settlement is {omega}",
                m.omega()
            )));
        }
    }
    let claims = snapshot.portfolio().claims();
    let mut cache: Vec<Option<(f64, f64)>> = vec![None; claims.len()];
    let n = snapshot.n_paid();
    let mut rows = Vec::with_capacity(n);
    let mut pi_u = Vec::with_capacity(n);
    let mut pi_v = Vec::with_capacity(n);
    for p in snapshot.payments() {
        let (u, v) = match cache[p.claim_row] {
            Some(pair) => pair,
            None => {
                let claim = &claims[p.claim_row];
                let pair = (
                    reporting_inclusion_probability(reporting, claim, t)?,
                    payment_inclusion_probability(payment, claim, t)?,
                );
                cache[p.claim_row] = Some(pair);
                pair
            }
        };
        rows.push(p.payment_row);
        pi_u.push(u);
        pi_v.push(v);
    }
    InclusionProbabilities::from_components(snapshot.valuation_time(), t, rows, pi_u, pi_v, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{snapshot, Payment, Portfolio};
    use crate::hazard::TimeGrid;

    fn claim(t: f64, r: f64) -> Claim {
        Claim {
            claim_id: "a".into(),
            accident_time: t,
            reporting_time: r,
            covariates: vec![],
        }
    }

    fn reporting(rate: f64) -> PemModel {
        PemModel::from_rates(
            ModelKind::ReportingDelay,
            TimeGrid::single(24.0).unwrap(),
            &[rate],
        )
        .unwrap()
    }

    fn payment(rate: f64) -> PemModel {
        PemModel::from_rates(
            ModelKind::PaymentIntensity,
            TimeGrid::single(24.0).unwrap(),
            &[rate],
        )
        .unwrap()
    }

    #[test]
    fn reporting_probability_examples() {
        let m = reporting(1.0);
        let ln2 = std::f64::consts::LN_2;
        assert!(
            (reporting_inclusion_probability(&m, &claim(0.0, 0.0), ln2).unwrap() - 0.5).abs()
                < 1e-15
        );
        assert_eq!(
            reporting_inclusion_probability(&m, &claim(3.0, 3.0), 3.0).unwrap(),
            0.0
        );
        let m = reporting(2.0);
        let p = reporting_inclusion_probability(&m, &claim(1.0, 1.0), 2.0).unwrap();
        assert!((p - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.864665).abs() < 1e-6);
        assert_eq!(
            reporting_inclusion_probability(&m, &claim(0.0, 0.0), 24.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn reporting_probability_rejects_future_claims() {
        let err =
            reporting_inclusion_probability(&reporting(1.0), &claim(5.0, 5.0), 4.0).unwrap_err();
        assert!(err.to_string().starts_with("claim after valuation date"));
    }

    #[test]
    fn payment_probability_examples() {
        let m = payment(0.7);
        let p = payment_inclusion_probability(&m, &claim(0.0, 1.0), 7.0).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
        assert_eq!(
            payment_inclusion_probability(&m, &claim(0.0, 1.0), 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            payment_inclusion_probability(&m, &claim(0.0, 1.0), 30.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn kinds_are_checked() {
        assert!(matches!(
            reporting_inclusion_probability(&payment(1.0), &claim(0.0, 0.0), 1.0),
            Err(ReserveError::WrongModelKind { .. })
        ));
        assert!(matches!(
            payment_inclusion_probability(&reporting(1.0), &claim(0.0, 0.0), 1.0),
            Err(ReserveError::WrongModelKind { .. })
        ));
    }

    #[test]
    fn components_multiply_and_share_claim_level_pi_u() {
        let claims = vec![claim(0.0, 1.0)];
        let pays = vec![
            Payment {
                claim_id: "a".into(),
                payment_time: 2.0,
                amount: 10.0,
            },
            Payment {
                claim_id: "a".into(),
                payment_time: 3.0,
                amount: 20.0,
            },
        ];
        let pf = Portfolio::new(claims, pays, vec![], 24.0).unwrap();
        let snap = snapshot(&pf, 4.0);
        let probs = compute_inclusion_probabilities(&reporting(0.5), &payment(1.0), &snap).unwrap();
        assert_eq!(probs.len(), 2);
        assert_eq!(probs.pi_u[0], probs.pi_u[1]);
        for k in 0..2 {
            assert_eq!(probs.pi[k], probs.pi_u[k] * probs.pi_v[k]);
        }
        assert!((probs.pi_v[0] - 3.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn floor_is_applied_and_counted() {
        let p = InclusionProbabilities::from_components(
            1.0,
            1.0,
            vec![0, 1],
            vec![0.5, 1.0],
            vec![0.8, 0.0],
            1e-6,
        )
        .unwrap();
        assert_eq!(p.pi[0], 0.4);
        assert_eq!(p.pi_v[1], 1e-6);
        assert_eq!(p.n_floored, 1);
        assert!(InclusionProbabilities::from_components(
            1.0,
            1.0,
            vec![0],
            vec![1.5],
            vec![1.0],
            1e-6
        )
        .is_err());
    }

    #[test]
    fn monotone_in_valuation_time() {
        let grid = TimeGrid::new(vec![0.0, 2.0, 9.0, 24.0]).unwrap();
        let rep = PemModel::new(
            ModelKind::ReportingDelay,
            grid.clone(),
            vec![0.1, -1.0, -3.0],
            vec![0.3],
            vec!["x".into()],
        )
        .unwrap();
        let pay = PemModel::new(
            ModelKind::PaymentIntensity,
            grid,
            vec![1.0, -0.5, -2.0],
            vec![0.2, 0.1],
            vec!["x".into(), "u".into()],
        )
        .unwrap();
        let c = Claim {
            claim_id: "a".into(),
            accident_time: 1.0,
            reporting_time: 2.5,
            covariates: vec![1.0],
        };
        let mut prev = (0.0, 0.0);
        for k in 0..120 {
            let tau = 2.5 + 0.25 * k as f64;
            let u = reporting_inclusion_probability(&rep, &c, tau).unwrap();
            let v = payment_inclusion_probability(&pay, &c, tau).unwrap();
            assert!(u >= prev.0 && v >= prev.1);
            prev = (u, v);
        }
        assert_eq!(prev, (1.0, 1.0));
    }
}
