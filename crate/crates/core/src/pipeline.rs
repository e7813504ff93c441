//! End-to-end runs: load → scores → features → predictions → grid.
//!
//! Each stage writes its output under the run directory together with a
//! content key (SHA-256 over the upstream key and the stage's settings). A
//! rerun reuses a stage whose key is unchanged and recomputes everything
//! downstream of the first stale stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backtest::{
    compute_metrics_with, default_grid, run_backtest, run_grid, summarize, FilterFeature, FilterSpec, GridReport,
    PredictionIndex, WeightScheme,
};
use crate::error::{json_key_error, Error, Result};
use crate::hermite::{FitRecord, PolyFit, DEFAULT_LAMBDA};
use crate::panel::{load_benchmark, load_panel, save_panel, MonthIndex, MonthlyPanel, ReturnSeries};
use crate::risk::{
    lta, ltr, lts, mrar, quantile_set, sharpe, svar, write_features_csv, FeatureRow, FeatureTable, QuantileSet,
    RiskParams,
};
use crate::rng::{digest, mix64};
use crate::shuffle::{rolling_fits, write_scores_csv, FactorSelection, PValueScore, ShuffleConfig};
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::trend::{index_predictions, moving_window_predict, write_predictions_csv, BoostParams, ModelKind};
use crate::trend::{TrendConfig, TrendPrediction};
use crate::VERSION;

/// Fewest observed returns in the trailing window for MRaR and Sharpe.
pub const MIN_FEATURE_OBS: usize = 12;

/// Where the panel comes from: two CSVs, or a synthetic spec.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub funds: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
}

fn all_filter_sets() -> Vec<Vec<FilterFeature>> {
    default_grid(&BTreeMap::new(), 0.5)
        .into_iter()
        .filter(|(f, w)| !f.use_ml && *w == WeightScheme::Even)
        .map(|(f, _)| f.enabled.into_iter().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Benchmark name → `date,return` CSV, used for correlations.
    pub benchmarks: BTreeMap<String, PathBuf>,
    pub risk_free: Option<PathBuf>,
    pub seed: u64,
    pub regression_window: usize,
    pub training_window: usize,
    /// Trailing months for the MRaR and Sharpe features.
    pub feature_window: usize,
    pub lambda: f64,
    pub n_shuffles: usize,
    pub risk: RiskParams,
    pub thresholds: BTreeMap<FilterFeature, f64>,
    pub p_threshold: f64,
    pub filter_sets: Vec<Vec<FilterFeature>>,
    pub ml: Vec<bool>,
    pub weightings: Vec<WeightScheme>,
    pub model: ModelKind,
    pub boost: BoostParams,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            benchmarks: BTreeMap::new(),
            risk_free: None,
            seed: 0,
            regression_window: 36,
            training_window: 24,
            feature_window: 36,
            lambda: DEFAULT_LAMBDA,
            n_shuffles: 1000,
            risk: RiskParams::default(),
            thresholds: FilterFeature::ALL.iter().map(|f| (*f, 0.0)).collect(),
            p_threshold: 0.5,
            filter_sets: all_filter_sets(),
            ml: vec![false, true],
            weightings: vec![WeightScheme::Even, WeightScheme::AumWeighted],
            model: ModelKind::Boosted,
            boost: BoostParams::default(),
            output_dir: None,
            workers: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses `text`; relative paths are taken relative to `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let (key, message) = json_key_error(e);
            Error::InvalidConfig { key, message }
        })?;
        for p in [&mut cfg.data.funds, &mut cfg.data.factors, &mut cfg.data.synthetic, &mut cfg.risk_free]
            .into_iter()
            .flatten()
        {
            resolve(base_dir, p);
        }
        for p in cfg.benchmarks.values_mut() {
            resolve(base_dir, p);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn config_err(key: &str, message: impl Into<String>) -> Error {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Checks settings and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        match (&self.data.funds, &self.data.factors, &self.data.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            _ => {
                return Err(Self::config_err(
                    "data",
                    "give either both 'funds' and 'factors' or a 'synthetic' spec",
                ))
            }
        }
        let mut files: Vec<(String, &PathBuf)> = vec![];
        for (k, p) in [
            ("data.funds", &self.data.funds),
            ("data.factors", &self.data.factors),
            ("data.synthetic", &self.data.synthetic),
            ("risk_free", &self.risk_free),
        ] {
            if let Some(p) = p {
                files.push((k.to_string(), p));
            }
        }
        for (name, p) in &self.benchmarks {
            files.push((format!("benchmarks.{name}"), p));
        }
        for (key, p) in files {
            if !p.is_file() {
                return Err(Self::config_err(&key, format!("file not found: {}", p.display())));
            }
        }
        if self.regression_window < 8 {
            return Err(Self::config_err("regression_window", "must be at least 8 months"));
        }
        if self.training_window < 3 {
            return Err(Self::config_err("training_window", "must be at least 3 months"));
        }
        if self.feature_window < 2 {
            return Err(Self::config_err("feature_window", "must be at least 2 months"));
        }
        self.shuffle_config().validate()?;
        self.risk.validate()?;
        self.boost.validate()?;
        if self.workers == Some(0) {
            return Err(Self::config_err("workers", "must be at least 1"));
        }
        if self.ml.is_empty() || self.weightings.is_empty() || self.filter_sets.is_empty() {
            return Err(Self::config_err("filter_sets", "the experiment grid is empty"));
        }
        for (spec, _) in self.grid() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Stage seed derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        mix64(self.seed ^ digest(&[b"stage", stage.as_bytes()]))
    }

    pub fn shuffle_config(&self) -> ShuffleConfig {
        ShuffleConfig {
            n_shuffles: self.n_shuffles,
            seed: self.stage_seed("shuffle"),
            window_months: self.regression_window,
            lambda: self.lambda,
        }
    }

    pub fn trend_config(&self) -> TrendConfig {
        TrendConfig {
            window: self.training_window,
            model: self.model,
            boost: self.boost,
            seed: self.stage_seed("trend"),
        }
    }

    pub fn grid(&self) -> Vec<(FilterSpec, WeightScheme)> {
        let mut out = Vec::new();
        for set in &self.filter_sets {
            for &use_ml in &self.ml {
                for &w in &self.weightings {
                    out.push((
                        FilterSpec::with_thresholds(set.iter().copied(), use_ml, &self.thresholds, self.p_threshold),
                        w,
                    ));
                }
            }
        }
        out
    }

    /// Hash of everything that can change an output; paths, the output
    /// directory and the worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = None;
        c.data = DataConfig::default();
        c.benchmarks = c.benchmarks.keys().map(|k| (k.clone(), PathBuf::new())).collect();
        c.risk_free = c.risk_free.map(|_| PathBuf::new());
        sha256_hex(&[serde_json::to_string(&c).expect("config serializes").as_bytes()])
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn file_bytes(p: &Path) -> Result<Vec<u8>> {
    fs::read(p).map_err(|e| Error::io(p, e))
}

/// The panel named by `data`.
pub fn load_data(data: &DataConfig) -> Result<MonthlyPanel> {
    match (&data.funds, &data.factors, &data.synthetic) {
        (Some(f), Some(x), None) => load_panel(f, x),
        (None, None, Some(s)) => {
            let spec = SyntheticSpec::from_path(s)?;
            generate_synthetic(&spec, spec.seed)
        }
        _ => Err(Error::invalid("data needs both funds and factors, or a synthetic spec")),
    }
}

/// Ridge fits of every (fund, factor) pair on every rolling window, without
/// shuffling. Windows with too little data are skipped.
pub fn fit_panel(panel: &MonthlyPanel, window: usize, lambda: f64) -> Vec<FitRecord> {
    let ends = crate::shuffle::window_end_months(panel, window);
    panel
        .funds
        .par_iter()
        .map(|f| {
            let mut out = Vec::new();
            for &t in &ends {
                let from = t.offset(1 - window as i64);
                for x in &panel.factors {
                    let fit = crate::panel::align(&f.returns, &x.returns, (from, t))
                        .and_then(|pair| crate::hermite::ridge_fit(&pair, lambda));
                    if let Ok(fit) = fit {
                        out.push(FitRecord::new(&f.id, &x.id, t, &fit));
                    }
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// One scored window fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub fit: FitRecord,
    pub score: PValueScore,
}

/// Rolling fits and scores of every fund against every factor, fund-major,
/// then month, then factor.
pub fn score_panel(panel: &MonthlyPanel, config: &ShuffleConfig) -> Result<Vec<ScoredRecord>> {
    let mut out = Vec::new();
    for f in &panel.funds {
        let r = rolling_fits(panel, &f.id, config, None)?;
        out.extend(r.entries.into_iter().map(|e| ScoredRecord {
            fit: FitRecord::new(&e.score.fund, &e.score.factor, e.score.as_of, &e.fit),
            score: e.score,
        }));
    }
    Ok(out)
}

/// Quantile sets per month and factor from each factor's history up to and
/// including that month. Factors with too short a history are absent.
pub fn quantile_sets(
    panel: &MonthlyPanel,
    months: &[MonthIndex],
) -> BTreeMap<MonthIndex, BTreeMap<String, QuantileSet>> {
    let per_factor: Vec<Vec<(MonthIndex, QuantileSet)>> = panel
        .factors
        .par_iter()
        .map(|f| {
            months
                .iter()
                .filter_map(|&t| {
                    let hist = f.returns.present_in(f.returns.start, t);
                    quantile_set(&f.id, &hist).ok().map(|q| (t, q))
                })
                .collect()
        })
        .collect();
    let mut out: BTreeMap<MonthIndex, BTreeMap<String, QuantileSet>> = BTreeMap::new();
    for (f, sets) in panel.factors.iter().zip(per_factor) {
        for (t, q) in sets {
            out.entry(t).or_default().insert(f.id.clone(), q);
        }
    }
    out
}

struct FundMonth<'a> {
    fits: BTreeMap<String, PolyFit>,
    scores: Vec<&'a PValueScore>,
}

fn stack_features(
    fund: &str,
    t: MonthIndex,
    entry: Option<&FundMonth>,
    qsets: Option<&BTreeMap<String, QuantileSet>>,
    risk: &RiskParams,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let (Some(entry), Some(qsets)) = (entry, qsets) else {
        return (None, None, None, None);
    };
    let gamma: BTreeSet<String> = entry
        .scores
        .iter()
        .filter(|s| s.score >= risk.score_threshold && qsets.contains_key(&s.factor))
        .map(|s| s.factor.clone())
        .collect();
    if gamma.is_empty() {
        return (None, None, None, None);
    }
    let sel = FactorSelection {
        fund: fund.to_string(),
        as_of: t,
        gamma,
        threshold: risk.score_threshold,
    };
    let s = svar(&sel, &entry.fits, qsets, risk).ok();
    let a = match lta(&sel, &entry.fits, qsets) {
        Ok(v) => Some(v),
        Err(e) => {
            log::debug!("{fund} {t}: LTA unavailable: {e}");
            None
        }
    };
    match (a, s) {
        (Some(a), Some(s)) => (Some(a), Some(s), ltr(a, s).ok(), Some(lts(a, s, risk.kappa))),
        _ => (a, s, None, None),
    }
}

/// Feature rows for every fund with some return history, at every month
/// from the first scored window to the end of the panel.
pub fn compute_features(
    panel: &MonthlyPanel,
    scored: &[ScoredRecord],
    risk: &RiskParams,
    feature_window: usize,
    risk_free: Option<&ReturnSeries>,
) -> Result<FeatureTable> {
    risk.validate()?;
    let first = scored
        .iter()
        .map(|r| r.score.as_of)
        .min()
        .ok_or_else(|| Error::EmptyDataset("no scored windows; the panel is too short or too sparse".into()))?;
    let months: Vec<MonthIndex> = MonthIndex::range_inclusive(first, panel.span.1).collect();
    let qsets = quantile_sets(panel, &months);

    let mut by_key: BTreeMap<(&str, MonthIndex), FundMonth> = BTreeMap::new();
    for r in scored {
        let e = by_key.entry((r.score.fund.as_str(), r.score.as_of)).or_insert_with(|| FundMonth {
            fits: BTreeMap::new(),
            scores: Vec::new(),
        });
        e.fits.insert(r.fit.factor.clone(), r.fit.to_fit());
        e.scores.push(&r.score);
    }

    let rows: Vec<Vec<FeatureRow>> = panel
        .funds
        .par_iter()
        .map(|f| {
            let mut out = Vec::new();
            let Some((born, _)) = f.returns.coverage() else {
                return out;
            };
            for &t in &months {
                if t < born {
                    continue;
                }
                let (lta, svar, ltr, lts) =
                    stack_features(&f.id, t, by_key.get(&(f.id.as_str(), t)), qsets.get(&t), risk);
                let from = t.offset(1 - feature_window as i64);
                let trailing: Vec<(MonthIndex, f64)> = MonthIndex::range_inclusive(from, t)
                    .filter_map(|m| f.returns.get(m).map(|r| (m, r)))
                    .collect();
                let (mut mrar_v, mut sharpe_v) = (None, None);
                if trailing.len() >= MIN_FEATURE_OBS {
                    let r: Vec<f64> = trailing.iter().map(|x| x.1).collect();
                    let rf: Vec<f64> = trailing
                        .iter()
                        .map(|(m, _)| risk_free.and_then(|s| s.get(*m)).unwrap_or(0.0))
                        .collect();
                    mrar_v = mrar(&r, &rf, risk.gamma).ok();
                    sharpe_v = sharpe(&r, &rf).ok();
                }
                out.push(FeatureRow {
                    fund: f.id.clone(),
                    as_of: t,
                    lta,
                    svar,
                    ltr,
                    lts,
                    mrar: mrar_v,
                    sharpe: sharpe_v,
                    ret: f.returns.get(t),
                    aum: f.aum_at(t),
                });
            }
            out
        })
        .collect();
    Ok(FeatureTable::from_rows(rows.into_iter().flatten()))
}

/// First month with a full training window of feature rows behind it.
pub fn prediction_start(features: &FeatureTable, training_window: usize) -> Option<MonthIndex> {
    features.first_month().map(|m| m.offset(training_window as i64))
}

pub fn compute_predictions(
    panel: &MonthlyPanel,
    features: &FeatureTable,
    trend: &TrendConfig,
) -> Result<Vec<TrendPrediction>> {
    let start = prediction_start(features, trend.window)
        .ok_or_else(|| Error::EmptyDataset("no feature rows to train on".into()))?;
    let end = panel.span.1;
    if start > end {
        return Err(Error::EmptyDataset(format!(
            "panel ends at {end}, before the first full training window closes at {start}"
        )));
    }
    moving_window_predict(panel, features, start, end, trend)
}

/// Benchmark series and the optional risk-free series.
pub fn load_references(config: &RunConfig) -> Result<(BTreeMap<String, ReturnSeries>, Option<ReturnSeries>)> {
    let mut b = BTreeMap::new();
    for (name, p) in &config.benchmarks {
        b.insert(name.clone(), load_benchmark(p)?);
    }
    let rf = config.risk_free.as_ref().map(load_benchmark).transpose()?;
    Ok((b, rf))
}

/// Decision months of the backtest: every month with predictions.
pub fn backtest_span(predictions: &[TrendPrediction]) -> Result<(MonthIndex, MonthIndex)> {
    let first = predictions.iter().map(|p| p.as_of).min();
    let last = predictions.iter().map(|p| p.as_of).max();
    match (first, last) {
        (Some(a), Some(b)) if b > a => Ok((a, b)),
        _ => Err(Error::EmptyDataset("need predictions for at least two months to backtest".into())),
    }
}

/// Deterministic JSON report of a grid run.
pub fn report_json(config: &RunConfig, span: (MonthIndex, MonthIndex), grid: &GridReport) -> Value {
    let mut report = serde_json::Map::new();
    report.insert("version".into(), json!(VERSION));
    report.insert("config_hash".into(), json!(config.hash()));
    report.insert(
        "parameters".into(),
        json!({
            "seed": config.seed,
            "regression_window": config.regression_window,
            "training_window": config.training_window,
            "feature_window": config.feature_window,
            "lambda": config.lambda,
            "n_shuffles": config.n_shuffles,
            "risk": config.risk,
            "thresholds": config.thresholds,
            "p_threshold": config.p_threshold,
            "model": config.model,
            "boost": config.boost,
            "backtest_start": span.0,
            "backtest_end": span.1,
        }),
    );
    report.insert(
        "conventions".into(),
        json!({
            "Sharpe Ratio": "annualized: mean monthly excess return x 12 / annual volatility",
            "feature sharpe": "unannualized: mean / sample std of monthly excess returns over the feature window",
            "Max Drawdown": "largest 1 - V_t / running peak of the value path",
        }),
    );
    if let Value::Object(g) = grid.to_json() {
        report.extend(g);
    }
    Value::Object(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub stages: Vec<StageRecord>,
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Scores,
    Features,
    Predictions,
    Grid,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Scores => "scores",
            Stage::Features => "features",
            Stage::Predictions => "predictions",
            Stage::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub panel: Option<MonthlyPanel>,
    pub scored: Option<Vec<ScoredRecord>>,
    pub features: Option<FeatureTable>,
    pub predictions: Option<Vec<TrendPrediction>>,
    pub report: Option<Value>,
}

/// Output files, relative to the run directory.
pub mod files {
    pub const FUNDS: &str = "panel/funds.csv";
    pub const FACTORS: &str = "panel/factors.csv";
    pub const SCORED: &str = "scores/scored_fits.json";
    pub const SCORES: &str = "scores/scores.csv";
    pub const FEATURES: &str = "features.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const REPORT: &str = "report.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const PATHS: &str = "value_paths";
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    stages: Vec<StageRecord>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Pipeline {
    /// Validates `config` and prepares `out`.
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            config,
            out,
            stages: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn key_path(&self, stage: Stage) -> PathBuf {
        self.out.join(".cache").join(format!("{}.key", stage.name()))
    }

    fn cached<T>(
        &mut self,
        stage: Stage,
        key: &str,
        load: impl FnOnce(&Self) -> Result<T>,
        compute: impl FnOnce(&Self) -> Result<T>,
        save: impl FnOnce(&Self, &T) -> Result<()>,
    ) -> Result<T> {
        let key_path = self.key_path(stage);
        if fs::read_to_string(&key_path).ok().as_deref() == Some(key) {
            match load(self) {
                Ok(v) => {
                    log::info!("{}: reusing cached output", stage.name());
                    self.stages.push(StageRecord {
                        stage: stage.name().into(),
                        key: key.into(),
                        cached: true,
                    });
                    return Ok(v);
                }
                Err(e) => log::warn!("{}: cache unreadable ({e}); recomputing", stage.name()),
            }
        }
        log::info!("{}: computing", stage.name());
        let v = compute(self).map_err(|e| e.in_stage(stage.name()))?;
        let _ = fs::remove_file(&key_path);
        save(self, &v).map_err(|e| e.in_stage(stage.name()))?;
        let dir = key_path.parent().expect("cache dir");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(&key_path, key).map_err(|e| Error::io(&key_path, e))?;
        self.stages.push(StageRecord {
            stage: stage.name().into(),
            key: key.into(),
            cached: false,
        });
        Ok(v)
    }

    fn ingest_key(&self) -> Result<String> {
        let d = &self.config.data;
        let mut parts: Vec<Vec<u8>> = vec![b"ingest".to_vec()];
        for p in [&d.funds, &d.factors, &d.synthetic].into_iter().flatten() {
            parts.push(file_bytes(p)?);
        }
        Ok(sha256_hex(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>()))
    }

    fn chain(upstream: &str, stage: Stage, settings: &impl Serialize) -> String {
        let s = serde_json::to_string(settings).expect("settings serialize");
        sha256_hex(&[upstream.as_bytes(), stage.name().as_bytes(), s.as_bytes()])
    }

    /// Runs every stage up to and including `last`.
    pub fn run_until(&mut self, last: Stage) -> Result<Artifacts> {
        let mut art = Artifacts::default();
        let key = self.ingest_key().map_err(|e| e.in_stage("ingest"))?;
        let panel = self.cached(
            Stage::Ingest,
            &key,
            |p| load_panel(p.path(files::FUNDS), p.path(files::FACTORS)),
            |p| load_data(&p.config.data),
            |p, panel| {
                let dir = p.path("panel");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                save_panel(panel, p.path(files::FUNDS), p.path(files::FACTORS))?;
                Ok(())
            },
        )?;
        art.panel = Some(panel);
        if last == Stage::Ingest {
            return Ok(art);
        }
        let panel = art.panel.as_ref().expect("panel");

        let shuffle = self.config.shuffle_config();
        let key = Self::chain(&key, Stage::Scores, &shuffle);
        let scored = self.cached(
            Stage::Scores,
            &key,
            |p| {
                let text = fs::read_to_string(p.path(files::SCORED)).map_err(|e| Error::io(p.path(files::SCORED), e))?;
                Ok(serde_json::from_str::<Vec<ScoredRecord>>(&text)?)
            },
            |_| score_panel(panel, &shuffle),
            |p, scored| {
                let mut w = create(&p.path(files::SCORED))?;
                serde_json::to_writer(&mut w, scored)?;
                let scores: Vec<PValueScore> = scored.iter().map(|r| r.score.clone()).collect();
                write_scores_csv(&scores, create(&p.path(files::SCORES))?)
            },
        )?;
        art.scored = Some(scored);
        if last == Stage::Scores {
            return Ok(art);
        }

        let (benchmarks, rf) = load_references(&self.config).map_err(|e| e.in_stage("features"))?;
        let rf_bytes = match &self.config.risk_free {
            Some(p) => file_bytes(p)?,
            None => Vec::new(),
        };
        let settings = json!({
            "risk": self.config.risk,
            "feature_window": self.config.feature_window,
            "risk_free": sha256_hex(&[&rf_bytes]),
        });
        let key = Self::chain(&key, Stage::Features, &settings);
        let features = {
            let scored = art.scored.as_ref().expect("scores");
            let (risk, window) = (self.config.risk, self.config.feature_window);
            self.cached(
                Stage::Features,
                &key,
                |p| Ok(FeatureTable::from_rows(crate::risk::read_features_csv(p.path(files::FEATURES))?)),
                |_| compute_features(panel, scored, &risk, window, rf.as_ref()),
                |p, table| {
                    let rows: Vec<FeatureRow> = table.rows().cloned().collect();
                    write_features_csv(&rows, create(&p.path(files::FEATURES))?)
                },
            )?
        };
        art.features = Some(features);
        if last == Stage::Features {
            return Ok(art);
        }

        let trend = self.config.trend_config();
        let key = Self::chain(&key, Stage::Predictions, &trend);
        let predictions = {
            let features = art.features.as_ref().expect("features");
            self.cached(
                Stage::Predictions,
                &key,
                |p| crate::trend::read_predictions_csv(p.path(files::PREDICTIONS)),
                |_| compute_predictions(panel, features, &trend),
                |p, preds| write_predictions_csv(preds, create(&p.path(files::PREDICTIONS))?),
            )?
        };
        art.predictions = Some(predictions);
        if last == Stage::Predictions {
            return Ok(art);
        }

        let report = self
            .grid_stage(panel, art.features.as_ref().unwrap(), art.predictions.as_ref().unwrap(), &benchmarks, rf.as_ref(), &key)
            .map_err(|e| e.in_stage("grid"))?;
        art.report = Some(report);
        Ok(art)
    }

    fn grid_stage(
        &mut self,
        panel: &MonthlyPanel,
        features: &FeatureTable,
        predictions: &[TrendPrediction],
        benchmarks: &BTreeMap<String, ReturnSeries>,
        rf: Option<&ReturnSeries>,
        upstream: &str,
    ) -> Result<Value> {
        let grid = self.config.grid();
        let index: PredictionIndex = index_predictions(predictions);
        let span = backtest_span(predictions)?;
        let cells = run_grid(panel, features, &index, &grid, span, benchmarks, rf)?;
        let summary = summarize(cells)?;
        let report = report_json(&self.config, span, &summary);

        let mut w = create(&self.path(files::REPORT))?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        use std::io::Write;
        writeln!(w).map_err(|e| Error::io(self.path(files::REPORT), e))?;

        // value paths of the best cell and the two passive benchmarks
        let best = &summary.cells[summary.best];
        let scheme = if best.weighted { WeightScheme::AumWeighted } else { WeightScheme::Even };
        let mut exports = vec![("best_performer", best.filters.clone(), scheme)];
        let passive = FilterSpec::with_thresholds([], false, &self.config.thresholds, self.config.p_threshold);
        exports.push(("simple_average", passive.clone(), WeightScheme::Even));
        exports.push(("aum_weighted", passive, WeightScheme::AumWeighted));
        for (name, spec, scheme) in exports {
            let res = run_backtest(panel, features, &index, &spec, scheme, span)?;
            // also a consistency check on the reported metrics
            compute_metrics_with(&res, benchmarks, rf, false)?;
            res.write_value_path_csv(create(&self.path(&format!("{}/{name}.csv", files::PATHS)))?)?;
        }

        let key = Self::chain(upstream, Stage::Grid, &grid);
        self.stages.push(StageRecord {
            stage: Stage::Grid.name().into(),
            key,
            cached: false,
        });
        Ok(report)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: VERSION.into(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            created: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            stages: self.stages.clone(),
        }
    }

    /// Full run plus manifest.
    pub fn run(&mut self) -> Result<(Artifacts, Manifest)> {
        let art = self.run_until(Stage::Grid)?;
        let manifest = self.manifest();
        let mut w = create(&self.path(files::MANIFEST))?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        Ok((art, manifest))
    }
}
