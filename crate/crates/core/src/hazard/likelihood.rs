//! Weighted piecewise-exponential log-likelihood with optional right truncation.
//!
//! For unit `j` with covariates `x_j`, weight `γ_j`, event counts `d_jn` per
//! grid interval, exposure window `[0, t_j]` and optional truncation bound `b_j`:
//!
//! ```text
//! ℓ_j = γ_j [ Σ_n d_jn (a_n + η_j) - Λ_j(t_j) - log(1 - exp(-Λ_j(b_j))) ]
//! Λ_j(t) = exp(η_j) Σ_n exp(a_n) |interval_n ∩ [0, t]|,   η_j = <x_j, β>
//! ```
//!
//! A reporting-delay unit has one event at `t_j = U_j`; a payment-process unit
//! has its observed payment counts and `t_j` equal to the observed window.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::TimeGrid;

/// Units per parallel partial sum. Partial sums are reduced in chunk order so
/// results do not depend on the thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PemUnit {
    pub covariates: Vec<f64>,
    pub weight: f64,
    /// `(interval, count)` pairs.
    pub events: Vec<(usize, f64)>,
    pub exposure_end: f64,
    pub truncation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PemLikelihood {
    grid: TimeGrid,
    n_features: usize,
    units: Vec<PemUnit>,
    ridge: f64,
}

struct Partial {
    value: f64,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
}

impl PemLikelihood {
    pub fn new(grid: TimeGrid, n_features: usize, units: Vec<PemUnit>, ridge: f64) -> Self {
        PemLikelihood {
            grid,
            n_features,
            units,
            ridge,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn units(&self) -> &[PemUnit] {
        &self.units
    }

    /// Parameter count: one log-rate per interval followed by the coefficients.
    pub fn dim(&self) -> usize {
        self.grid.n_intervals() + self.n_features
    }

    /// Weighted events per interval.
    pub fn events_per_interval(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_intervals()];
        for u in &self.units {
            for &(n, d) in &u.events {
                out[n] += u.weight * d;
            }
        }
        out
    }

    /// Weighted exposure per interval (ignores truncation).
    pub fn exposure_per_interval(&self) -> Vec<f64> {
        let m = self.grid.n_intervals();
        let mut out = vec![0.0; m];
        for u in &self.units {
            for (n, o) in out.iter_mut().enumerate() {
                *o += u.weight * self.grid.overlap(n, u.exposure_end);
            }
        }
        out
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.accumulate(theta, false).value
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.accumulate(theta, false).gradient
    }

    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let p = self.accumulate(theta, true);
        let d = self.dim();
        Evaluation {
            value: p.value,
            gradient: p.gradient,
            hessian: DMatrix::from_row_slice(d, d, &p.hessian),
        }
    }

    fn accumulate(&self, theta: &[f64], with_hessian: bool) -> Partial {
        let d = self.dim();
        assert_eq!(theta.len(), d, "parameter length");
        let m = self.grid.n_intervals();
        let (alpha, beta) = theta.split_at(m);
        let base: Vec<f64> = alpha.iter().map(|a| a.exp()).collect();

        let partials: Vec<Partial> = self
            .units
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = Partial {
                    value: 0.0,
                    gradient: vec![0.0; d],
                    hessian: if with_hessian {
                        vec![0.0; d * d]
                    } else {
                        Vec::new()
                    },
                };
                let mut scratch = vec![0.0; m];
                for unit in chunk {
                    self.unit_terms(
                        unit,
                        alpha,
                        beta,
                        &base,
                        &mut scratch,
                        &mut acc,
                        with_hessian,
                    );
                }
                acc
            })
            .collect();

        let mut total = Partial {
            value: 0.0,
            gradient: vec![0.0; d],
            hessian: if with_hessian {
                vec![0.0; d * d]
            } else {
                Vec::new()
            },
        };
        for p in partials {
            total.value += p.value;
            for (t, g) in total.gradient.iter_mut().zip(&p.gradient) {
                *t += g;
            }
            for (t, h) in total.hessian.iter_mut().zip(&p.hessian) {
                *t += h;
            }
        }
        // ridge on coefficients only
        for k in 0..self.n_features {
            let b = beta[k];
            total.value -= 0.5 * self.ridge * b * b;
            total.gradient[m + k] -= self.ridge * b;
            if with_hessian {
                total.hessian[(m + k) * d + m + k] -= self.ridge;
            }
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    fn unit_terms(
        &self,
        unit: &PemUnit,
        alpha: &[f64],
        beta: &[f64],
        base: &[f64],
        scratch: &mut [f64],
        acc: &mut Partial,
        with_hessian: bool,
    ) {
        let m = alpha.len();
        let p = beta.len();
        let d = m + p;
        let x = &unit.covariates;
        let w = unit.weight;
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let r = eta.exp();

        // events
        let mut n_events = 0.0;
        for &(n, c) in &unit.events {
            acc.value += w * c * (alpha[n] + eta);
            acc.gradient[n] += w * c;
            n_events += c;
        }

        // exposure: -Λ(t)
        let t = unit.exposure_end;
        let mut lam = 0.0;
        let last = if t > 0.0 {
            self.grid.interval_of(t) + 1
        } else {
            0
        };
        for n in 0..last {
            let s = r * base[n] * self.grid.overlap(n, t);
            scratch[n] = s;
            lam += s;
        }
        acc.value -= w * lam;
        for n in 0..last {
            acc.gradient[n] -= w * scratch[n];
        }
        for k in 0..p {
            acc.gradient[m + k] += w * x[k] * (n_events - lam);
        }
        if with_hessian {
            let h = &mut acc.hessian;
            for n in 0..last {
                let s = w * scratch[n];
                h[n * d + n] -= s;
                for k in 0..p {
                    h[n * d + m + k] -= s * x[k];
                    h[(m + k) * d + n] -= s * x[k];
                }
            }
            for k in 0..p {
                for l in 0..p {
                    h[(m + k) * d + m + l] -= w * x[k] * x[l] * lam;
                }
            }
        }

        // truncation: -log F(b) = g(Λ(b))
        if let Some(b) = unit.truncation {
            let last = self.grid.interval_of(b) + 1;
            let mut lb = 0.0;
            for n in 0..last {
                let q = r * base[n] * self.grid.overlap(n, b);
                scratch[n] = q;
                lb += q;
            }
            let (g, g1, g2) = neg_log_cdf(lb);
            acc.value += w * g;
            for n in 0..last {
                acc.gradient[n] += w * g1 * scratch[n];
            }
            for k in 0..p {
                acc.gradient[m + k] += w * g1 * x[k] * lb;
            }
            if with_hessian {
                let h = &mut acc.hessian;
                // g'' ∇Λ ∇Λᵀ + g' ∇²Λ, ∇Λ = (q_n, x_k Λ)
                for n in 0..last {
                    let qn = scratch[n];
                    for n2 in 0..last {
                        h[n * d + n2] += w * g2 * qn * scratch[n2];
                    }
                    h[n * d + n] += w * g1 * qn;
                    for k in 0..p {
                        let v = w * (g2 * qn * x[k] * lb + g1 * x[k] * qn);
                        h[n * d + m + k] += v;
                        h[(m + k) * d + n] += v;
                    }
                }
                for k in 0..p {
                    for l in 0..p {
                        h[(m + k) * d + m + l] += w * x[k] * x[l] * (g2 * lb * lb + g1 * lb);
                    }
                }
            }
        }
    }
}

/// `g(Λ) = -log(1 - e^{-Λ})` with its first and second derivatives.
fn neg_log_cdf(lam: f64) -> (f64, f64, f64) {
    let em1 = lam.exp_m1(); // e^Λ - 1
    let cdf = -(-lam).exp_m1(); // 1 - e^{-Λ}
    let g = -cdf.ln();
    let g1 = -1.0 / em1;
    let g2 = 1.0 / (em1 * cdf);
    (g, g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> PemLikelihood {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.5, 6.0]).unwrap();
        let units = vec![
            PemUnit {
                covariates: vec![1.0, 0.3],
                weight: 1.0,
                events: vec![(1, 1.0)],
                exposure_end: 1.7,
                truncation: Some(2.2),
            },
            PemUnit {
                covariates: vec![0.0, -1.2],
                weight: 2.5,
                events: vec![(0, 2.0), (2, 1.0)],
                exposure_end: 4.0,
                truncation: None,
            },
            PemUnit {
                covariates: vec![1.0, 0.8],
                weight: 0.7,
                events: vec![(2, 1.0)],
                exposure_end: 5.5,
                truncation: Some(5.9),
            },
        ];
        PemLikelihood::new(grid, 2, units, 1e-3)
    }

    fn central_diff(lik: &PemLikelihood, theta: &[f64], i: usize, h: f64) -> f64 {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[i] += h;
        dn[i] -= h;
        (lik.value(&up) - lik.value(&dn)) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lik = fixture();
        let theta = [-0.4, 0.2, -1.1, 0.5, -0.3];
        let g = lik.gradient(&theta);
        for i in 0..theta.len() {
            let fd = central_diff(&lik, &theta, i, 1e-6);
            assert!(
                (g[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{i}: {} vs {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let lik = fixture();
        let theta = [-0.4, 0.2, -1.1, 0.5, -0.3];
        let h = lik.evaluate(&theta).hessian;
        for j in 0..theta.len() {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let (gu, gd) = (lik.gradient(&up), lik.gradient(&dn));
            for i in 0..theta.len() {
                let fd = (gu[i] - gd[i]) / 2e-6;
                assert!(
                    (h[(i, j)] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn neg_log_cdf_is_stable() {
        let (g, g1, g2) = neg_log_cdf(50.0);
        assert!(g.abs() < 1e-20 && g1.abs() < 1e-20 && g2.abs() < 1e-20);
        let (g, g1, g2) = neg_log_cdf(1e-8);
        assert!((g - 18.420680743952367).abs() < 1e-6);
        assert!((g1 + 1e8).abs() / 1e8 < 1e-6);
        assert!((g2 - 1e16).abs() / 1e16 < 1e-6);
    }
}
