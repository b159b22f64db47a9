use serde::{Deserialize, Serialize};

use crate::error::{ReserveError, Result};

/// Cut points `0 = c_0 < c_1 < ... < c_m = ω` of a piecewise-constant rate.
///
/// Interval `n` (0-based) is `(c_n, c_{n+1}]`; the point `0` belongs to the first
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    cuts: Vec<f64>,
}

impl TimeGrid {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.len() < 2 {
            return Err(ReserveError::InvalidInput(
                "time grid needs at least two cut points".into(),
            ));
        }
        if cuts[0] != 0.0 {
            return Err(ReserveError::InvalidInput(
                "time grid must start at 0".into(),
            ));
        }
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ReserveError::InvalidInput(
                "time grid cut points must be finite and strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { cuts })
    }

    /// Cuts every `width` months up to `horizon`; the last interval is shorter
    /// when `width` does not divide `horizon`.
    pub fn uniform(horizon: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && horizon > 0.0) {
            return Err(ReserveError::InvalidInput(
                "grid width and horizon must be positive".into(),
            ));
        }
        let mut cuts = vec![0.0];
        let mut k = 1u32;
        loop {
            let c = f64::from(k) * width;
            if c >= horizon - 1e-9 * horizon {
                break;
            }
            cuts.push(c);
            k += 1;
        }
        cuts.push(horizon);
        TimeGrid::new(cuts)
    }

    /// A single interval `[0, horizon]`.
    pub fn single(horizon: f64) -> Result<Self> {
        TimeGrid::new(vec![0.0, horizon])
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn horizon(&self) -> f64 {
        *self.cuts.last().expect("grid has cut points")
    }

    pub fn n_intervals(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.cuts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the interval containing `t`; clamps to the first/last interval.
    pub fn interval_of(&self, t: f64) -> usize {
        // first cut strictly greater-or-equal to t among c_1..c_m
        let upper = &self.cuts[1..];
        let idx = upper.partition_point(|&c| c < t);
        idx.min(self.n_intervals() - 1)
    }

    /// Length of `(c_n, c_{n+1}] ∩ [0, t]`.
    pub fn overlap(&self, n: usize, t: f64) -> f64 {
        (t.min(self.cuts[n + 1]) - self.cuts[n]).max(0.0)
    }

    /// `Σ_n rate_n · |interval_n ∩ [0, t]|`, exact for piecewise-constant rates.
    pub fn integrate(&self, rates: &[f64], t: f64) -> f64 {
        debug_assert_eq!(rates.len(), self.n_intervals());
        if t <= 0.0 {
            return 0.0;
        }
        let last = self.interval_of(t);
        (0..=last).map(|n| rates[n] * self.overlap(n, t)).sum()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = ReserveError;

    fn try_from(cuts: Vec<f64>) -> Result<Self> {
        TimeGrid::new(cuts)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.cuts
    }
}
