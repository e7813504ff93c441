//! Next-month trend probabilities `p_i` from a model retrained monthly on a
//! moving window of feature rows.

pub mod gbdt;
pub mod logistic;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{MonthIndex, MonthlyPanel};
use crate::risk::FeatureTable;
use crate::rng::{digest, mix64};

pub use gbdt::{train_boosted, BoostParams, BoostedModel, RegressionTree, TrainReport};
pub use logistic::LogisticModel;

/// Width of the model input `(lts, mrar, sharpe, return, aum)`.
pub const N_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub features: [f64; N_FEATURES],
    /// Next-month return was positive.
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPrediction {
    pub fund: String,
    pub as_of: MonthIndex,
    pub p: f64,
}

/// Anything that maps a feature vector to a probability.
pub trait TrendModel: Send + Sync {
    fn predict_proba(&self, features: &[f64]) -> f64;
}

impl TrendModel for BoostedModel {
    fn predict_proba(&self, features: &[f64]) -> f64 {
        BoostedModel::predict_proba(self, features)
    }
}

/// Fixed-probability model: the "no machine learning" arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel(pub f64);

impl TrendModel for ConstantModel {
    fn predict_proba(&self, _features: &[f64]) -> f64 {
        self.0
    }
}

/// Probability under a boosted model.
pub fn predict_proba(model: &BoostedModel, features: &[f64; N_FEATURES]) -> f64 {
    model.predict_proba(features)
}

/// Trains the boosted classifier on `data`.
pub fn train(data: &[TrainingExample], rounds: usize, depth: usize, rate: f64, seed: u64) -> Result<BoostedModel> {
    let params = BoostParams {
        rounds,
        max_depth: depth,
        learning_rate: rate,
        seed,
        ..BoostParams::default()
    };
    Ok(train_with(data, &params)?.model)
}

pub fn train_with(data: &[TrainingExample], params: &BoostParams) -> Result<TrainReport> {
    let x: Vec<Vec<f64>> = data.iter().map(|e| e.features.to_vec()).collect();
    let y: Vec<bool> = data.iter().map(|e| e.label).collect();
    train_boosted(&x, &y, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Boosted,
    Logistic,
    Constant { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrendConfig {
    /// Training months preceding each prediction month.
    pub window: usize,
    pub model: ModelKind,
    pub boost: BoostParams,
    pub seed: u64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            window: 24,
            model: ModelKind::Boosted,
            boost: BoostParams::default(),
            seed: 0,
        }
    }
}

/// Examples for months `[t - window, t - 1]`: features at month `m`, label
/// from the return at `m + 1` (never later than `t`).
pub fn build_dataset(
    panel: &MonthlyPanel,
    features: &FeatureTable,
    t: MonthIndex,
    window: usize,
) -> Result<Vec<TrainingExample>> {
    if window < 3 {
        return Err(Error::invalid(format!("training window must be >= 3 months, got {window}")));
    }
    let mut out = Vec::new();
    for m in MonthIndex::range_inclusive(t.offset(-(window as i64)), t.prev()) {
        let Some(rows) = features.at(m) else { continue };
        for (fund, row) in rows {
            let Ok(rec) = panel.fund(fund) else { continue };
            let Some(next) = rec.returns.get(m.next()) else { continue };
            out.push(TrainingExample {
                features: row.model_inputs(),
                label: next > 0.0,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("no labelled examples before {t}")));
    }
    Ok(out)
}

fn fit_model(data: &[TrainingExample], config: &TrendConfig, t: MonthIndex) -> Result<Box<dyn TrendModel>> {
    Ok(match config.model {
        ModelKind::Constant { p } => Box::new(ConstantModel(p)),
        ModelKind::Logistic => Box::new(LogisticModel::fit(data)?),
        ModelKind::Boosted => {
            let seed = mix64(config.seed ^ digest(&[b"trend", t.to_string().as_bytes()]));
            let params = BoostParams { seed, ..config.boost };
            Box::new(train_with(data, &params)?.model)
        }
    })
}

/// Retrains every month in `[start, end]` on the preceding window and
/// predicts every fund with a feature row at that month.
pub fn moving_window_predict(
    panel: &MonthlyPanel,
    features: &FeatureTable,
    start: MonthIndex,
    end: MonthIndex,
    config: &TrendConfig,
) -> Result<Vec<TrendPrediction>> {
    if end < start {
        return Err(Error::invalid("prediction span ends before it starts"));
    }
    let months: Vec<MonthIndex> = MonthIndex::range_inclusive(start, end).collect();
    let per_month: Vec<Result<Vec<TrendPrediction>>> = months
        .par_iter()
        .map(|&t| {
            let data = build_dataset(panel, features, t, config.window)?;
            let model = fit_model(&data, config, t)?;
            Ok(features
                .at(t)
                .map(|rows| {
                    rows.values()
                        .map(|r| TrendPrediction {
                            fund: r.fund.clone(),
                            as_of: t,
                            p: model.predict_proba(&r.model_inputs()),
                        })
                        .collect()
                })
                .unwrap_or_default())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_month {
        out.extend(r?);
    }
    Ok(out)
}

/// Predictions grouped by month, then fund.
pub fn index_predictions(preds: &[TrendPrediction]) -> BTreeMap<MonthIndex, BTreeMap<String, TrendPrediction>> {
    let mut out: BTreeMap<MonthIndex, BTreeMap<String, TrendPrediction>> = BTreeMap::new();
    for p in preds {
        out.entry(p.as_of).or_default().insert(p.fund.clone(), p.clone());
    }
    out
}

/// Writes `fund,date,p`.
pub fn write_predictions_csv<W: Write>(preds: &[TrendPrediction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(["fund", "date", "p"]).map_err(err)?;
    for p in preds {
        w.write_record([p.fund.as_str(), &p.as_of.to_string(), &p.p.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<predictions csv>", e))
}

#[derive(Deserialize)]
struct PredictionRow {
    fund: String,
    date: MonthIndex,
    p: f64,
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<TrendPrediction>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    rdr.deserialize::<PredictionRow>()
        .enumerate()
        .map(|(i, row)| {
            let r = row.map_err(|e| Error::Parse {
                file: path.display().to_string(),
                row: i + 2,
                message: e.to_string(),
            })?;
            Ok(TrendPrediction {
                fund: r.fund,
                as_of: r.date,
                p: r.p,
            })
        })
        .collect()
}
