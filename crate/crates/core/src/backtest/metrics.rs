//! Performance statistics of a backtest value path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::BacktestResult;
use crate::error::{Error, Result};
use crate::panel::ReturnSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_months: usize,
    pub cumulative_return: f64,
    /// Annualized, excess over the risk-free series (zero when absent).
    /// `None` only from the lenient path when volatility is zero.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub n_months_up: usize,
    pub n_months_down: usize,
    pub max_monthly_increase: f64,
    pub max_monthly_decrease: f64,
    /// Mean of the positive months; 0 when there are none.
    pub avg_monthly_increase: f64,
    pub annual_return: f64,
    pub annual_volatility: f64,
    /// Pearson correlation with each benchmark that overlaps the backtest.
    pub correlations: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn corr_hfrifof(&self) -> Option<f64> {
        self.correlations.get("HFRIFOF").copied()
    }

    pub fn corr_hfrifwi(&self) -> Option<f64> {
        self.correlations.get("HFRIFWI").copied()
    }

    /// Rows keyed by the report's display names, in display order.
    pub fn table_rows(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("Cumulative returns".into(), json!(self.cumulative_return));
        m.insert("Number of Months Increase".into(), json!(self.n_months_up));
        m.insert("Number of Months Decrease".into(), json!(self.n_months_down));
        m.insert("Max Monthly Increase".into(), json!(self.max_monthly_increase));
        m.insert("Max Monthly Decrease".into(), json!(self.max_monthly_decrease));
        m.insert("Average Monthly Increase".into(), json!(self.avg_monthly_increase));
        m.insert("Annual Return".into(), json!(self.annual_return));
        m.insert("Annual Volatility".into(), json!(self.annual_volatility));
        m.insert("Sharpe Ratio".into(), json!(self.sharpe));
        m.insert("Max Drawdown".into(), json!(self.max_drawdown));
        for (name, c) in &self.correlations {
            m.insert(format!("Correlation with {name}"), json!(c));
        }
        m
    }
}

/// Largest peak-to-trough loss `max_t 1 - V_t / max_{s<=t} V_s`.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in values {
        peak = peak.max(v);
        if peak > 0.0 {
            worst = worst.max(1.0 - v / peak);
        }
    }
    worst
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Strict metrics: zero volatility is an error.
pub fn compute_metrics(result: &BacktestResult, benchmarks: &BTreeMap<String, ReturnSeries>) -> Result<MetricsReport> {
    compute_metrics_with(result, benchmarks, None, true)
}

/// `risk_free` replaces the zero benchmark in the Sharpe ratio (months
/// without a rate count as zero). With `strict` off, an undefined Sharpe is
/// reported as `None` instead of failing.
pub fn compute_metrics_with(
    result: &BacktestResult,
    benchmarks: &BTreeMap<String, ReturnSeries>,
    risk_free: Option<&ReturnSeries>,
    strict: bool,
) -> Result<MetricsReport> {
    let r = result.returns();
    let months = result.return_months();
    if r.len() < 2 {
        return Err(Error::InsufficientData { have: r.len(), need: 2 });
    }
    let t = r.len() as f64;
    let cumulative_return = r.iter().map(|x| 1.0 + x).product::<f64>() - 1.0;
    let annual_return = (1.0 + cumulative_return).powf(12.0 / t) - 1.0;
    let annual_volatility = sample_std(&r) * 12f64.sqrt();

    let excess: Vec<f64> = r
        .iter()
        .zip(&months)
        .map(|(x, m)| x - risk_free.and_then(|rf| rf.get(*m)).unwrap_or(0.0))
        .collect();
    let mean_excess = mean(&excess);
    // rounding leaves a constant series with a std of a few ulps
    let sharpe = if annual_volatility > 1e-12 * mean(&r).abs() && annual_volatility > 0.0 {
        Some(mean_excess * 12.0 / annual_volatility)
    } else if strict {
        return Err(Error::UndefinedRatio("Sharpe ratio of a zero-volatility return series".into()));
    } else {
        None
    };

    let ups: Vec<f64> = r.iter().copied().filter(|x| *x > 0.0).collect();
    let mut correlations = BTreeMap::new();
    for (name, series) in benchmarks {
        let (a, b): (Vec<f64>, Vec<f64>) = r
            .iter()
            .zip(&months)
            .filter_map(|(x, m)| series.get(*m).map(|y| (*x, y)))
            .unzip();
        if let Some(c) = pearson(&a, &b) {
            correlations.insert(name.clone(), c);
        }
    }

    Ok(MetricsReport {
        n_months: r.len(),
        cumulative_return,
        sharpe,
        max_drawdown: max_drawdown(&result.values()),
        n_months_up: ups.len(),
        n_months_down: r.iter().filter(|x| **x < 0.0).count(),
        max_monthly_increase: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_monthly_decrease: r.iter().copied().fold(f64::INFINITY, f64::min),
        avg_monthly_increase: if ups.is_empty() { 0.0 } else { mean(&ups) },
        annual_return,
        annual_volatility,
        correlations,
    })
}
