//! Long-history factor distributions: percentile grids with generalized
//! Pareto tails and raw moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum history length for a quantile set.
pub const MIN_HISTORY: usize = 60;

/// Minimum exceedance count for a fitted tail.
pub const MIN_EXCEEDANCES: usize = 10;

/// Probability levels of the five named quantiles.
pub const NAMED_LEVELS: [f64; 5] = [0.01, 0.16, 0.50, 0.84, 0.99];

const NAMED_PERCENTILES: [usize; 5] = [1, 16, 50, 84, 99];

const TAIL_THRESHOLD: f64 = 0.95;

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailSide {
    Lower,
    Upper,
}

/// Generalized Pareto model of one tail's exceedances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub side: TailSide,
    pub threshold_quantile: f64,
    /// Threshold value in the original coordinates.
    pub threshold: f64,
    /// Shape ξ (positive = heavy tail).
    pub shape: f64,
    pub scale: f64,
    pub n_exceedances: usize,
    /// `false` when too few exceedances were available and the empirical
    /// extreme is used instead.
    pub fitted: bool,
}

/// Probability-weighted-moment estimate of GPD `(shape, scale)` from
/// positive exceedances. Returns `None` when the estimate is not usable.
pub fn gpd_pwm(exceedances: &[f64]) -> Option<(f64, f64)> {
    let n = exceedances.len();
    if n < 2 {
        return None;
    }
    let mut y = exceedances.to_vec();
    y.sort_by(f64::total_cmp);
    let nf = n as f64;
    let a0 = y.iter().sum::<f64>() / nf;
    let a1 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (1.0 - (i as f64 + 1.0 - 0.35) / nf) * v)
        .sum::<f64>()
        / nf;
    let d = a0 - 2.0 * a1;
    if !(d > 0.0) {
        return None;
    }
    let k = a0 / d - 2.0;
    let scale = 2.0 * a0 * a1 / d;
    if !(scale > 0.0) || !k.is_finite() {
        return None;
    }
    Some((-k, scale))
}

/// Exceedance quantile: the level exceeded with conditional probability `tail_prob`.
pub fn gpd_exceedance_quantile(shape: f64, scale: f64, tail_prob: f64) -> f64 {
    if shape.abs() < 1e-12 {
        -scale * tail_prob.ln()
    } else {
        scale / shape * (tail_prob.powf(-shape) - 1.0)
    }
}

/// Fits the upper tail of `sorted` and returns the model plus the
/// `target` upper-tail quantile (e.g. 0.99).
fn fit_upper(sorted: &[f64], side: TailSide, target: f64) -> (TailModel, f64) {
    let n = sorted.len();
    let u = empirical_quantile(sorted, TAIL_THRESHOLD);
    let exc: Vec<f64> = sorted.iter().filter(|v| **v > u).map(|v| v - u).collect();
    let fallback = |shape, scale| {
        (
            TailModel {
                side,
                threshold_quantile: TAIL_THRESHOLD,
                threshold: u,
                shape,
                scale,
                n_exceedances: exc.len(),
                fitted: false,
            },
            sorted[n - 1],
        )
    };
    if exc.len() < MIN_EXCEEDANCES {
        return fallback(0.0, 0.0);
    }
    let Some((shape, scale)) = gpd_pwm(&exc) else {
        return fallback(0.0, 0.0);
    };
    let zeta = exc.len() as f64 / n as f64;
    let cond = ((1.0 - target) / zeta).min(1.0);
    let q = u + gpd_exceedance_quantile(shape, scale, cond);
    (
        TailModel {
            side,
            threshold_quantile: TAIL_THRESHOLD,
            threshold: u,
            shape,
            scale,
            n_exceedances: exc.len(),
            fitted: true,
        },
        q,
    )
}

/// Percentile grid, named quantiles, tails and moments of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSet {
    pub factor: String,
    /// θ at [`NAMED_LEVELS`].
    pub named: [f64; 5],
    /// θ at percentiles 1..=99 (index 0 is the 1st percentile).
    pub grid: Vec<f64>,
    /// Raw moments `E[X^k]`, `k = 0..4`.
    pub moments: [f64; 5],
    pub lower_tail: Option<TailModel>,
    pub upper_tail: Option<TailModel>,
    pub n_obs: usize,
}

impl QuantileSet {
    /// Builds a set from an explicit 99-point grid and raw moments.
    pub fn from_grid(factor: &str, grid: Vec<f64>, moments: [f64; 5]) -> Result<Self> {
        if grid.len() != 99 {
            return Err(Error::invalid(format!("percentile grid needs 99 entries, got {}", grid.len())));
        }
        if grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("percentile grid must be non-decreasing"));
        }
        Ok(Self {
            factor: factor.to_string(),
            named: NAMED_PERCENTILES.map(|p| grid[p - 1]),
            grid,
            moments,
            lower_tail: None,
            upper_tail: None,
            n_obs: 0,
        })
    }

    /// Replaces the named quantile nodes (used for quadrature) without
    /// touching the grid.
    pub fn with_named(mut self, named: [f64; 5]) -> Self {
        self.named = named;
        self
    }

    /// Moments of `(X - mean) / std`, by binomial expansion of the raw moments.
    pub fn standardized_moments(&self, mean: f64, std: f64) -> [f64; 5] {
        let raw = self.moments;
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (i, r) in raw.iter().enumerate().take(k + 1) {
                s += binomial(k, i) * r * (-mean).powi((k - i) as i32);
            }
            *o = s / std.powi(k as i32);
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Builds the quantile set of a factor from its (long) history.
///
/// Percentiles 2..98 are empirical; 1 and 99 come from GPD tails fitted by
/// probability-weighted moments beyond the 5% / 95% empirical thresholds,
/// or the empirical extremes when a tail has fewer than 10 exceedances.
pub fn quantile_set(factor: &str, history: &[f64]) -> Result<QuantileSet> {
    if history.len() < MIN_HISTORY {
        return Err(Error::InsufficientData {
            have: history.len(),
            need: MIN_HISTORY,
        });
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in factor history"));
    }
    let mut sorted = history.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (upper, q99) = fit_upper(&sorted, TailSide::Upper, 0.99);
    let neg: Vec<f64> = sorted.iter().rev().map(|v| -v).collect();
    let (mut lower, q01) = fit_upper(&neg, TailSide::Lower, 0.99);
    lower.threshold = -lower.threshold;

    let mut grid: Vec<f64> = (1..=99).map(|p| empirical_quantile(&sorted, p as f64 / 100.0)).collect();
    grid[0] = (-q01).min(grid[1]);
    grid[98] = q99.max(grid[97]);

    let n = sorted.len() as f64;
    let mut moments = [0.0; 5];
    for v in &sorted {
        let mut p = 1.0;
        for m in moments.iter_mut() {
            *m += p;
            p *= v;
        }
    }
    for m in moments.iter_mut() {
        *m /= n;
    }
    moments[0] = 1.0;

    Ok(QuantileSet {
        factor: factor.to_string(),
        named: NAMED_PERCENTILES.map(|p| grid[p - 1]),
        grid,
        moments,
        lower_tail: Some(lower),
        upper_tail: Some(upper),
        n_obs: history.len(),
    })
}
