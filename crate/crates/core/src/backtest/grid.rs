//! The experiment grid: filter combinations × ML on/off × weighting, plus
//! group-mean tables over each axis.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::metrics::{compute_metrics_with, MetricsReport};
use super::{run_backtest, FilterFeature, FilterSpec, PredictionIndex, WeightScheme};
use crate::error::{Error, Result};
use crate::panel::{MonthIndex, MonthlyPanel, ReturnSeries};
use crate::risk::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub filters: FilterSpec,
    pub weighted: bool,
    pub result: MetricsReport,
}

impl ExperimentCell {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("Filters".into(), json!(self.filters.label()));
        m.insert("Using Machine Learning".into(), json!(self.filters.use_ml));
        m.insert("Weighted".into(), json!(self.weighted));
        m.extend(self.result.table_rows());
        Value::Object(m)
    }
}

/// All 8 filter subsets × {no ML, ML} × {even, AUM-weighted}.
pub fn default_grid(thresholds: &BTreeMap<FilterFeature, f64>, p_threshold: f64) -> Vec<(FilterSpec, WeightScheme)> {
    let mut out = Vec::with_capacity(32);
    for mask in 0..8u8 {
        let enabled: Vec<FilterFeature> = FilterFeature::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, f)| *f)
            .collect();
        for use_ml in [false, true] {
            for scheme in [WeightScheme::Even, WeightScheme::AumWeighted] {
                out.push((
                    FilterSpec::with_thresholds(enabled.iter().copied(), use_ml, thresholds, p_threshold),
                    scheme,
                ));
            }
        }
    }
    out
}

/// One backtest per cell, in grid order. Cells that never hold anything
/// report `null` Sharpe rather than failing the grid.
#[allow(clippy::too_many_arguments)]
pub fn run_grid(
    panel: &MonthlyPanel,
    features: &FeatureTable,
    predictions: &PredictionIndex,
    grid: &[(FilterSpec, WeightScheme)],
    span: (MonthIndex, MonthIndex),
    benchmarks: &BTreeMap<String, ReturnSeries>,
    risk_free: Option<&ReturnSeries>,
) -> Result<Vec<ExperimentCell>> {
    if grid.is_empty() {
        return Err(Error::invalid("experiment grid is empty"));
    }
    grid.par_iter()
        .map(|(spec, scheme)| {
            let result = run_backtest(panel, features, predictions, spec, *scheme, span)?;
            Ok(ExperimentCell {
                filters: spec.clone(),
                weighted: scheme.is_weighted(),
                result: compute_metrics_with(&result, benchmarks, risk_free, false)?,
            })
        })
        .collect()
}

/// Mean of every table row over the cells in one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: Value,
    pub n_cells: usize,
    pub rows: Map<String, Value>,
}

fn group_mean(group: Value, cells: &[&ExperimentCell]) -> GroupMean {
    let mut sums: Vec<(String, f64, usize)> = Vec::new();
    for c in cells {
        for (k, v) in c.result.table_rows() {
            let pos = match sums.iter().position(|(name, _, _)| *name == k) {
                Some(p) => p,
                None => {
                    sums.push((k, 0.0, 0));
                    sums.len() - 1
                }
            };
            if let Some(x) = v.as_f64() {
                sums[pos].1 += x;
                sums[pos].2 += 1;
            }
        }
    }
    let rows = sums
        .into_iter()
        .map(|(k, s, n)| (k, if n > 0 { json!(s / n as f64) } else { Value::Null }))
        .collect();
    GroupMean {
        group,
        n_cells: cells.len(),
        rows,
    }
}

fn grouped<K: Ord>(cells: &[ExperimentCell], key: impl Fn(&ExperimentCell) -> K, label: impl Fn(&K) -> Value) -> Vec<GroupMean> {
    let mut groups: BTreeMap<K, Vec<&ExperimentCell>> = BTreeMap::new();
    for c in cells {
        groups.entry(key(c)).or_default().push(c);
    }
    groups.iter().map(|(k, v)| group_mean(label(k), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<ExperimentCell>,
    pub by_ml: Vec<GroupMean>,
    pub by_filters: Vec<GroupMean>,
    pub by_weighting: Vec<GroupMean>,
    /// Index into `cells` of the highest cumulative return.
    pub best: usize,
}

pub fn summarize(cells: Vec<ExperimentCell>) -> Result<GridReport> {
    if cells.is_empty() {
        return Err(Error::invalid("no experiment cells to summarize"));
    }
    let by_ml = grouped(&cells, |c| c.filters.use_ml, |k| json!(k));
    let by_filters = grouped(&cells, |c| c.filters.label(), |k| json!(k));
    let by_weighting = grouped(&cells, |c| c.weighted, |k| json!(k));
    let best = cells
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.result.cumulative_return.total_cmp(&b.1.result.cumulative_return).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(GridReport {
        cells,
        by_ml,
        by_filters,
        by_weighting,
        best,
    })
}

impl GridReport {
    pub fn find(&self, enabled: &[FilterFeature], use_ml: bool, weighted: bool) -> Option<&ExperimentCell> {
        self.cells.iter().find(|c| {
            c.filters.use_ml == use_ml
                && c.weighted == weighted
                && c.filters.enabled.len() == enabled.len()
                && enabled.iter().all(|f| c.filters.enabled.contains(f))
        })
    }

    /// Tables keyed by the axis column name.
    pub fn to_json(&self) -> Value {
        let table = |axis: &str, groups: &[GroupMean]| -> Value {
            Value::Array(
                groups
                    .iter()
                    .map(|g| {
                        let mut m = Map::new();
                        m.insert(axis.to_string(), g.group.clone());
                        m.insert("Cells".into(), json!(g.n_cells));
                        m.extend(g.rows.clone());
                        Value::Object(m)
                    })
                    .collect(),
            )
        };
        json!({
            "cells": self.cells.iter().map(ExperimentCell::to_json).collect::<Vec<_>>(),
            "by_machine_learning": table("Using Machine Learning", &self.by_ml),
            "by_filters": table("Filters", &self.by_filters),
            "by_weighting": table("Weighted", &self.by_weighting),
            "best_performer": self.cells[self.best].to_json(),
        })
    }
}
