//! The PolyModel feature stack: SVaR, LTA, LTR, LTS, plus MRaR and Sharpe.

pub mod measures;
pub mod quantiles;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{impute_feature, FeatureName, MonthIndex};
use crate::shuffle::DEFAULT_SCORE_THRESHOLD;

pub use measures::{
    lagrange_weights, lta, lta_pair, lta_weights, ltr, lts, max_grid_loss, median, mrar, sharpe, svar, svar_pair,
};
pub use quantiles::{empirical_quantile, quantile_set, QuantileSet, TailModel, TailSide, NAMED_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskParams {
    /// Stress confidence level. Informational: `xi` is what enters SVaR.
    pub alpha: f64,
    /// Normal quantile multiplier on the residual volatility.
    pub xi: f64,
    /// LTS penalty on SVaR.
    pub kappa: f64,
    /// MRaR risk aversion.
    pub gamma: f64,
    pub score_threshold: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            alpha: 0.98,
            xi: 2.33,
            kappa: 0.05,
            gamma: 2.0,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

impl RiskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::invalid(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.gamma == 0.0 || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma must be non-zero"));
        }
        Ok(())
    }
}

/// Per-fund, per-month features. Missing entries are imputed only when a
/// row is consumed for selection or training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub fund: String,
    pub as_of: MonthIndex,
    pub lta: Option<f64>,
    pub svar: Option<f64>,
    pub ltr: Option<f64>,
    pub lts: Option<f64>,
    pub mrar: Option<f64>,
    /// Unannualized.
    pub sharpe: Option<f64>,
    pub ret: Option<f64>,
    pub aum: Option<f64>,
}

impl FeatureRow {
    /// Model inputs `(lts, mrar, sharpe, return, aum)` with fill values for
    /// missing entries. Missing AUM counts as zero.
    pub fn model_inputs(&self) -> [f64; 5] {
        [
            impute_feature(FeatureName::Lts, self.lts),
            impute_feature(FeatureName::Mrar, self.mrar),
            impute_feature(FeatureName::Sharpe, self.sharpe),
            impute_feature(FeatureName::Return, self.ret),
            self.aum.unwrap_or(0.0),
        ]
    }
}

/// Feature rows indexed by month, then fund.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    by_month: BTreeMap<MonthIndex, BTreeMap<String, FeatureRow>>,
}

impl FeatureTable {
    pub fn from_rows(rows: impl IntoIterator<Item = FeatureRow>) -> Self {
        let mut by_month: BTreeMap<MonthIndex, BTreeMap<String, FeatureRow>> = BTreeMap::new();
        for r in rows {
            by_month.entry(r.as_of).or_default().insert(r.fund.clone(), r);
        }
        Self { by_month }
    }

    pub fn at(&self, month: MonthIndex) -> Option<&BTreeMap<String, FeatureRow>> {
        self.by_month.get(&month)
    }

    pub fn get(&self, fund: &str, month: MonthIndex) -> Option<&FeatureRow> {
        self.by_month.get(&month)?.get(fund)
    }

    pub fn months(&self) -> impl Iterator<Item = MonthIndex> + '_ {
        self.by_month.keys().copied()
    }

    pub fn first_month(&self) -> Option<MonthIndex> {
        self.by_month.keys().next().copied()
    }

    pub fn last_month(&self) -> Option<MonthIndex> {
        self.by_month.keys().next_back().copied()
    }

    /// All rows in (month, fund) order.
    pub fn rows(&self) -> impl Iterator<Item = &FeatureRow> {
        self.by_month.values().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.by_month.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `fund,date,lta,svar,ltr,lts,mrar,sharpe,return,aum`.
pub fn write_features_csv<W: Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["fund", "date", "lta", "svar", "ltr", "lts", "mrar", "sharpe", "return", "aum"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.fund.clone(),
            r.as_of.to_string(),
            cell(r.lta),
            cell(r.svar),
            cell(r.ltr),
            cell(r.lts),
            cell(r.mrar),
            cell(r.sharpe),
            cell(r.ret),
            cell(r.aum),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<features csv>", e))
}

#[derive(Deserialize)]
struct FeatureCsvRow {
    fund: String,
    date: MonthIndex,
    lta: Option<f64>,
    svar: Option<f64>,
    ltr: Option<f64>,
    lts: Option<f64>,
    mrar: Option<f64>,
    sharpe: Option<f64>,
    #[serde(rename = "return")]
    ret: Option<f64>,
    aum: Option<f64>,
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    rdr.deserialize::<FeatureCsvRow>()
        .enumerate()
        .map(|(i, row)| {
            let r = row.map_err(|e| Error::Parse {
                file: path.display().to_string(),
                row: i + 2,
                message: e.to_string(),
            })?;
            Ok(FeatureRow {
                fund: r.fund,
                as_of: r.date,
                lta: r.lta,
                svar: r.svar,
                ltr: r.ltr,
                lts: r.lts,
                mrar: r.mrar,
                sharpe: r.sharpe,
                ret: r.ret,
                aum: r.aum,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_csv_roundtrip() {
        let rows = vec![
            FeatureRow {
                fund: "A".into(),
                as_of: MonthIndex::new(2021, 3).unwrap(),
                lta: Some(0.0123),
                svar: Some(0.1),
                ltr: Some(0.123),
                lts: Some(0.0073),
                mrar: None,
                sharpe: Some(-0.25),
                ret: Some(0.01),
                aum: None,
            },
            FeatureRow {
                fund: "B".into(),
                as_of: MonthIndex::new(2021, 3).unwrap(),
                lta: None,
                svar: None,
                ltr: None,
                lts: None,
                mrar: Some(1.0 / 3.0),
                sharpe: None,
                ret: None,
                aum: Some(1e8),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_features_csv(&rows, std::fs::File::create(&p).unwrap()).unwrap();
        assert_eq!(read_features_csv(&p).unwrap(), rows);
    }

    #[test]
    fn params_validation() {
        assert!(RiskParams::default().validate().is_ok());
        let bad = RiskParams {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RiskParams {
            kappa: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
