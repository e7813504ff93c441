//! Fund-level risk measures built on the per-factor fits.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hermite::{predict, PolyFit};
use crate::risk::quantiles::QuantileSet;
use crate::risk::RiskParams;
use crate::shuffle::FactorSelection;

/// Largest predicted loss over the 1..99 percentile grid, floored at 0.
pub fn max_grid_loss(fit: &PolyFit, qs: &QuantileSet) -> f64 {
    let worst = qs
        .grid
        .iter()
        .map(|&theta| predict(fit, theta))
        .fold(f64::INFINITY, f64::min);
    (-worst).max(0.0)
}

/// Stress VaR of one (fund, factor) pair:
/// `sqrt(Ŷmax² + residual_variance · ξ²)`, via `hypot` so that a zero
/// polynomial gives exactly `sqrt(residual_variance) · ξ`.
pub fn svar_pair(fit: &PolyFit, qs: &QuantileSet, params: &RiskParams) -> f64 {
    max_grid_loss(fit, qs).hypot(fit.residual_variance.sqrt() * params.xi)
}

fn lookup<'a>(
    selection: &FactorSelection,
    fits: &'a BTreeMap<String, PolyFit>,
    qsets: &'a BTreeMap<String, QuantileSet>,
) -> Result<Vec<(&'a PolyFit, &'a QuantileSet)>> {
    if selection.gamma.is_empty() {
        return Err(Error::NoRelevantFactor {
            fund: selection.fund.clone(),
            as_of: selection.as_of,
        });
    }
    selection
        .gamma
        .iter()
        .map(|f| {
            let fit = fits
                .get(f)
                .ok_or_else(|| Error::invalid(format!("no fit for factor '{f}'")))?;
            let qs = qsets.get(f).ok_or_else(|| Error::invalid(format!("no quantile set for factor '{f}'")))?;
            Ok((fit, qs))
        })
        .collect()
}

/// Fund stress VaR: the maximum pair SVaR over the relevant factors.
pub fn svar(
    selection: &FactorSelection,
    fits: &BTreeMap<String, PolyFit>,
    qsets: &BTreeMap<String, QuantileSet>,
    params: &RiskParams,
) -> Result<f64> {
    Ok(lookup(selection, fits, qsets)?
        .into_iter()
        .map(|(fit, qs)| svar_pair(fit, qs, params))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Weights `w_q = ∫ ℓ_q dF` of the Lagrange interpolant through `nodes`,
/// integrated against a distribution with moments `m_0..m_4`.
pub fn lagrange_weights(nodes: &[f64; 5], moments: &[f64; 5]) -> Result<[f64; 5]> {
    let scale = nodes.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut w = [0.0; 5];
    for q in 0..5 {
        // coefficients of ℓ_q in ascending powers
        let mut poly = [0.0; 5];
        poly[0] = 1.0;
        let mut deg = 0;
        for r in 0..5 {
            if r == q {
                continue;
            }
            let denom = nodes[q] - nodes[r];
            if !(denom.abs() > 1e-12 * scale) {
                return Err(Error::invalid(format!(
                    "coincident quadrature nodes {} and {}",
                    nodes[q], nodes[r]
                )));
            }
            let mut next = [0.0; 5];
            for k in 0..=deg {
                next[k + 1] += poly[k] / denom;
                next[k] -= poly[k] * nodes[r] / denom;
            }
            poly = next;
            deg += 1;
        }
        w[q] = poly.iter().zip(moments).map(|(c, m)| c * m).sum();
    }
    Ok(w)
}

/// Lagrange weights for `fit`'s coordinate system: nodes are the named
/// quantiles standardized by the fit's window constants.
pub fn lta_weights(fit: &PolyFit, qs: &QuantileSet) -> Result<([f64; 5], [f64; 5])> {
    let nodes = qs.named.map(|t| fit.standardize(t));
    let moments = qs.standardized_moments(fit.x_mean, fit.x_std);
    Ok((lagrange_weights(&nodes, &moments)?, nodes))
}

/// Long-term alpha of one pair: `Σ w_q Φ(θ_q)`, exact for the degree-4 fit.
pub fn lta_pair(fit: &PolyFit, qs: &QuantileSet) -> Result<f64> {
    let (w, nodes) = lta_weights(fit, qs)?;
    Ok(w.iter().zip(nodes).map(|(w, z)| w * fit.coeffs.eval(z)).sum())
}

/// Median with the mean-of-central-two convention.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Fund long-term alpha: median pair LTA over the relevant factors.
pub fn lta(
    selection: &FactorSelection,
    fits: &BTreeMap<String, PolyFit>,
    qsets: &BTreeMap<String, QuantileSet>,
) -> Result<f64> {
    let values = lookup(selection, fits, qsets)?
        .into_iter()
        .map(|(fit, qs)| lta_pair(fit, qs))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&values).expect("non-empty gamma"))
}

pub fn ltr(lta: f64, svar: f64) -> Result<f64> {
    if !(svar > 0.0) {
        return Err(Error::UndefinedRatio(format!("LTR needs SVaR > 0, got {svar}")));
    }
    Ok(lta / svar)
}

pub fn lts(lta: f64, svar: f64, kappa: f64) -> f64 {
    lta - kappa * svar
}

/// Morningstar risk-adjusted return
/// `((1/T) Σ (1 + r_G,t)^(-γ))^(-T/γ) - 1` with geometric excess returns
/// `r_G,t = (1 + r_t) / (1 + r_f,t) - 1`.
pub fn mrar(returns: &[f64], risk_free: &[f64], gamma: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::invalid("MRaR needs at least one return"));
    }
    if returns.len() != risk_free.len() {
        return Err(Error::invalid("returns and risk-free series differ in length"));
    }
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(Error::invalid("MRaR risk aversion gamma must be non-zero"));
    }
    let t = returns.len() as f64;
    let mut acc = 0.0;
    for (r, rf) in returns.iter().zip(risk_free) {
        if !(1.0 + r > 0.0) || !(1.0 + rf > 0.0) {
            return Err(Error::invalid(format!("MRaR needs 1 + r > 0, got r = {r}, r_f = {rf}")));
        }
        let growth = (1.0 + r) / (1.0 + rf);
        acc += (-gamma * growth.ln()).exp();
    }
    let mean = acc / t;
    Ok((-t / gamma * mean.ln()).exp_m1())
}

fn mean_and_sample_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Unannualized Sharpe ratio of `returns` over `benchmark`.
pub fn sharpe(returns: &[f64], benchmark: &[f64]) -> Result<f64> {
    if returns.len() != benchmark.len() {
        return Err(Error::invalid("returns and benchmark differ in length"));
    }
    if returns.len() < 2 {
        return Err(Error::invalid("Sharpe ratio needs at least two returns"));
    }
    let excess: Vec<f64> = returns.iter().zip(benchmark).map(|(r, b)| r - b).collect();
    let (mean, sd) = mean_and_sample_std(&excess);
    if !(sd > 1e-12 * mean.abs()) || sd == 0.0 {
        return Err(Error::UndefinedRatio("excess returns have zero variance".into()));
    }
    Ok(mean / sd)
}
