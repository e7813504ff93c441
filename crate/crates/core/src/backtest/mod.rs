//! Fund filters, weighting schemes and the monthly rebalancing backtest.
//!
//! At each decision month `t` the universe is every fund with a feature row
//! and an observed return at `t`. Selected funds are weighted, and the
//! portfolio earns `Σ w_i r_i(t+1)` over the following month. No transaction
//! costs, no shorting, no leverage.

pub mod grid;
pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{impute_feature, FeatureName, MonthIndex, MonthlyPanel};
use crate::risk::{FeatureRow, FeatureTable};
use crate::trend::TrendPrediction;

pub use grid::{default_grid, run_grid, summarize, ExperimentCell, GridReport, GroupMean};
pub use metrics::{compute_metrics, compute_metrics_with, max_drawdown, MetricsReport};

/// Predictions indexed by month, then fund.
pub type PredictionIndex = BTreeMap<MonthIndex, BTreeMap<String, TrendPrediction>>;

/// Features that can gate selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterFeature {
    #[serde(rename = "LTS")]
    Lts,
    Sharpe,
    #[serde(rename = "MRaR")]
    Mrar,
}

impl FilterFeature {
    pub const ALL: [FilterFeature; 3] = [FilterFeature::Lts, FilterFeature::Sharpe, FilterFeature::Mrar];

    pub fn name(self) -> &'static str {
        match self {
            FilterFeature::Lts => "LTS",
            FilterFeature::Sharpe => "Sharpe",
            FilterFeature::Mrar => "MRaR",
        }
    }

    /// Imputed feature value as seen by the filter.
    pub fn value(self, row: &FeatureRow) -> f64 {
        match self {
            FilterFeature::Lts => impute_feature(FeatureName::Lts, row.lts),
            FilterFeature::Sharpe => impute_feature(FeatureName::Sharpe, row.sharpe),
            FilterFeature::Mrar => impute_feature(FeatureName::Mrar, row.mrar),
        }
    }
}

impl fmt::Display for FilterFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lts" => Ok(FilterFeature::Lts),
            "sharpe" => Ok(FilterFeature::Sharpe),
            "mrar" => Ok(FilterFeature::Mrar),
            _ => Err(Error::UnknownFeature(s.to_string())),
        }
    }
}

pub const DEFAULT_P_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub enabled: BTreeSet<FilterFeature>,
    pub thresholds: BTreeMap<FilterFeature, f64>,
    pub use_ml: bool,
    pub p_threshold: f64,
}

impl FilterSpec {
    /// `enabled` filters at the default zero thresholds.
    pub fn new(enabled: impl IntoIterator<Item = FilterFeature>, use_ml: bool) -> Self {
        Self::with_thresholds(enabled, use_ml, &BTreeMap::new(), DEFAULT_P_THRESHOLD)
    }

    /// Thresholds missing from `thresholds` default to zero.
    pub fn with_thresholds(
        enabled: impl IntoIterator<Item = FilterFeature>,
        use_ml: bool,
        thresholds: &BTreeMap<FilterFeature, f64>,
        p_threshold: f64,
    ) -> Self {
        let enabled: BTreeSet<FilterFeature> = enabled.into_iter().collect();
        let thresholds = enabled
            .iter()
            .map(|&f| (f, thresholds.get(&f).copied().unwrap_or(0.0)))
            .collect();
        Self {
            enabled,
            thresholds,
            use_ml,
            p_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.enabled {
            match self.thresholds.get(f) {
                Some(v) if v.is_finite() => {}
                Some(v) => return Err(Error::invalid(format!("threshold for {f} is not finite: {v}"))),
                None => return Err(Error::invalid(format!("no threshold for enabled filter {f}"))),
            }
        }
        if !(0.0..=1.0).contains(&self.p_threshold) {
            return Err(Error::invalid(format!("p_threshold must lie in [0, 1], got {}", self.p_threshold)));
        }
        Ok(())
    }

    /// `"LTS, Sharpe, MRaR"`, or `"No use"` when nothing is enabled.
    pub fn label(&self) -> String {
        if self.enabled.is_empty() {
            return "No use".into();
        }
        self.enabled.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Even,
    AumWeighted,
}

impl WeightScheme {
    pub fn is_weighted(self) -> bool {
        self == WeightScheme::AumWeighted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub month: MonthIndex,
    pub holdings: BTreeMap<String, f64>,
    pub value: f64,
}

impl PortfolioState {
    pub fn initial(month: MonthIndex) -> Self {
        Self {
            month,
            holdings: BTreeMap::new(),
            value: 1.0,
        }
    }
}

/// Funds passing every enabled threshold (strictly) and, with ML on,
/// `p > p_threshold`.
pub fn select_funds(
    features: &BTreeMap<String, FeatureRow>,
    predictions: Option<&BTreeMap<String, TrendPrediction>>,
    spec: &FilterSpec,
) -> Result<BTreeSet<String>> {
    if features.is_empty() {
        return Err(Error::EmptyDataset("no feature rows to select from".into()));
    }
    spec.validate()?;
    let mut out = BTreeSet::new();
    'funds: for (fund, row) in features {
        for f in &spec.enabled {
            if !(f.value(row) > spec.thresholds[f]) {
                continue 'funds;
            }
        }
        if spec.use_ml {
            let p = predictions
                .and_then(|m| m.get(fund))
                .ok_or_else(|| Error::invalid(format!("no trend prediction for {fund} at {}", row.as_of)))?;
            if !(p.p > spec.p_threshold) {
                continue;
            }
        }
        out.insert(fund.clone());
    }
    Ok(out)
}

/// New holdings for `selected`. Funds without AUM get zero weight under
/// AUM weighting; if no selected fund has positive AUM the allocation falls
/// back to even. Empty selection holds cash.
pub fn rebalance(
    state: &PortfolioState,
    selected: &BTreeSet<String>,
    scheme: WeightScheme,
    aum: &BTreeMap<String, f64>,
) -> PortfolioState {
    let mut holdings = BTreeMap::new();
    if !selected.is_empty() {
        let even = || {
            let w = 1.0 / selected.len() as f64;
            selected.iter().map(|f| (f.clone(), w)).collect::<BTreeMap<_, _>>()
        };
        holdings = match scheme {
            WeightScheme::Even => even(),
            WeightScheme::AumWeighted => {
                let a = |f: &String| aum.get(f).copied().filter(|v| v.is_finite() && *v > 0.0).unwrap_or(0.0);
                let total: f64 = selected.iter().map(a).sum();
                if total > 0.0 {
                    selected
                        .iter()
                        .filter(|f| a(f) > 0.0)
                        .map(|f| (f.clone(), a(f) / total))
                        .collect()
                } else {
                    log::warn!(
                        "{}: no positive AUM among {} selected funds, allocating evenly",
                        state.month,
                        selected.len()
                    );
                    even()
                }
            }
        };
    }
    PortfolioState {
        month: state.month,
        holdings,
        value: state.value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedSale {
    /// Month whose return was missing.
    pub month: MonthIndex,
    pub fund: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePoint {
    pub month: MonthIndex,
    pub value: f64,
    /// Return earned over the month ending here; `None` at the start.
    pub ret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub path: Vec<ValuePoint>,
    /// Decision made at each month of the span.
    pub holdings: Vec<PortfolioState>,
    pub forced_sales: Vec<ForcedSale>,
}

impl BacktestResult {
    pub fn returns(&self) -> Vec<f64> {
        self.path.iter().filter_map(|p| p.ret).collect()
    }

    pub fn return_months(&self) -> Vec<MonthIndex> {
        self.path.iter().filter(|p| p.ret.is_some()).map(|p| p.month).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.path.iter().map(|p| p.value).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.path.last().map_or(1.0, |p| p.value)
    }

    /// Writes `date,value,return`.
    pub fn write_value_path_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        w.write_record(["date", "value", "return"]).map_err(err)?;
        for p in &self.path {
            w.write_record([
                p.month.to_string(),
                p.value.to_string(),
                p.ret.map(|r| r.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<value path csv>", e))
    }
}

/// Funds eligible at `t`: a feature row and an observed return at `t`.
pub fn universe_at(features: &FeatureTable, t: MonthIndex) -> BTreeMap<String, FeatureRow> {
    features
        .at(t)
        .map(|rows| {
            rows.iter()
                .filter(|(_, r)| r.ret.is_some())
                .map(|(k, r)| (k.clone(), r.clone()))
                .collect()
        })
        .unwrap_or_default()
}

/// Monthly loop over decision months `span.0 ..= span.1`. The value path
/// starts at 1.0 at `span.0`; the last decision month has no realization.
pub fn run_backtest(
    panel: &MonthlyPanel,
    features: &FeatureTable,
    predictions: &PredictionIndex,
    spec: &FilterSpec,
    scheme: WeightScheme,
    span: (MonthIndex, MonthIndex),
) -> Result<BacktestResult> {
    let (start, end) = span;
    if end < start {
        return Err(Error::invalid(format!("empty backtest span {start}..{end}")));
    }
    spec.validate()?;
    let mut state = PortfolioState::initial(start);
    let mut path = vec![ValuePoint {
        month: start,
        value: 1.0,
        ret: None,
    }];
    let mut holdings = Vec::new();
    let mut forced_sales = Vec::new();

    for t in MonthIndex::range_inclusive(start, end) {
        state.month = t;
        let universe = universe_at(features, t);
        let selected = if universe.is_empty() {
            BTreeSet::new()
        } else {
            let preds = predictions.get(&t);
            if spec.use_ml && preds.is_none() {
                return Err(Error::invalid(format!("no trend predictions at {t}")));
            }
            select_funds(&universe, preds, spec)?
        };
        let aum: BTreeMap<String, f64> = universe
            .iter()
            .filter_map(|(k, r)| r.aum.map(|a| (k.clone(), a)))
            .collect();
        state = rebalance(&state, &selected, scheme, &aum);
        holdings.push(state.clone());
        if t == end {
            break;
        }

        let next = t.next();
        let mut r = 0.0;
        for (fund, &w) in &state.holdings {
            match panel.fund(fund)?.returns.get(next) {
                Some(x) => r += w * x,
                None => {
                    log::debug!("{fund} has no return at {next}; force-sold at zero return");
                    forced_sales.push(ForcedSale {
                        month: next,
                        fund: fund.clone(),
                        weight: w,
                    });
                }
            }
        }
        state.value *= 1.0 + r;
        path.push(ValuePoint {
            month: next,
            value: state.value,
            ret: Some(r),
        });
    }
    Ok(BacktestResult {
        path,
        holdings,
        forced_sales,
    })
}
