//! Python bindings. Structured results (scores, feature rows, reports) cross
//! the boundary as JSON and arrive as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use polymodel::backtest::metrics::{compute_metrics_with, max_drawdown as drawdown};
use polymodel::backtest::{run_backtest, FilterFeature, FilterSpec, WeightScheme};
use polymodel::pipeline::{self, backtest_span, load_references, Artifacts, RunConfig, Stage};
use polymodel::trend::index_predictions;
use polymodel::{Error, MonthlyPanel, SyntheticSpec};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn pair(y: Vec<f64>, x: Vec<f64>) -> PyResult<polymodel::AlignedPair> {
    polymodel::AlignedPair::from_vectors(y, x).map_err(py_err)
}

/// Probabilists' Hermite polynomial He_k(x), k in 0..=4.
#[pyfunction]
fn hermite(k: usize, x: f64) -> PyResult<f64> {
    polymodel::hermite(k, x).map_err(py_err)
}

/// A fitted degree-4 Hermite polynomial of y on a standardized factor.
#[pyclass(frozen, skip_from_py_object, module = "polymodel_py")]
#[derive(Clone)]
struct PolyFit {
    inner: polymodel::PolyFit,
}

#[pymethods]
impl PolyFit {
    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs.0.to_vec()
    }
    #[getter]
    fn r_squared(&self) -> f64 {
        self.inner.r_squared
    }
    #[getter]
    fn residual_variance(&self) -> f64 {
        self.inner.residual_variance
    }
    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }
    #[getter]
    fn x_mean(&self) -> f64 {
        self.inner.x_mean
    }
    #[getter]
    fn x_std(&self) -> f64 {
        self.inner.x_std
    }
    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs
    }

    /// Prediction at a raw factor value.
    fn predict(&self, x: f64) -> f64 {
        polymodel::predict(&self.inner, x)
    }

    fn __repr__(&self) -> String {
        format!(
            "PolyFit(coeffs={:?}, r_squared={:.4}, n_obs={})",
            self.inner.coeffs.0, self.inner.r_squared, self.inner.n_obs
        )
    }
}

#[pyfunction]
#[pyo3(signature = (y, x, lam = polymodel::hermite::DEFAULT_LAMBDA))]
fn ridge_fit(y: Vec<f64>, x: Vec<f64>, lam: f64) -> PyResult<PolyFit> {
    let inner = polymodel::ridge_fit(&pair(y, x)?, lam).map_err(py_err)?;
    Ok(PolyFit { inner })
}

#[pyfunction]
fn ols_fit(y: Vec<f64>, x: Vec<f64>) -> PyResult<PolyFit> {
    let inner = polymodel::ols_fit(&pair(y, x)?).map_err(py_err)?;
    Ok(PolyFit { inner })
}

/// Target-shuffling significance of one pair, as a dict with
/// `r2_observed`, `p_value` and `score`.
#[pyfunction]
#[pyo3(signature = (y, x, n_shuffles = 1000, seed = 0, lam = polymodel::hermite::DEFAULT_LAMBDA))]
fn pvalue_score<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    x: Vec<f64>,
    n_shuffles: usize,
    seed: u64,
    lam: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = polymodel::ShuffleConfig {
        n_shuffles,
        seed,
        lambda: lam,
        ..Default::default()
    };
    let s = polymodel::pvalue_score(&pair(y, x)?, &cfg).map_err(py_err)?;
    to_py(py, &s)
}

#[pyfunction]
#[pyo3(signature = (returns, gamma = 2.0, risk_free = None))]
fn mrar(returns: Vec<f64>, gamma: f64, risk_free: Option<Vec<f64>>) -> PyResult<f64> {
    let rf = risk_free.unwrap_or_else(|| vec![0.0; returns.len()]);
    polymodel::risk::mrar(&returns, &rf, gamma).map_err(py_err)
}

#[pyfunction]
fn max_drawdown(values: Vec<f64>) -> f64 {
    drawdown(&values)
}

/// Monthly fund and factor panel.
#[pyclass(frozen, module = "polymodel_py")]
struct Panel {
    inner: MonthlyPanel,
}

#[pymethods]
impl Panel {
    #[staticmethod]
    fn from_csv(funds: PathBuf, factors: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: polymodel::load_panel(funds, factors).map_err(py_err)?,
        })
    }

    /// Synthetic panel from a spec JSON string, or the planted desk spec
    /// when `spec` is omitted.
    #[staticmethod]
    #[pyo3(signature = (spec = None, seed = None, funds = 50, factors = 20, months = 120))]
    fn synthetic(spec: Option<&str>, seed: Option<u64>, funds: usize, factors: usize, months: usize) -> PyResult<Self> {
        let spec = match spec {
            Some(text) => SyntheticSpec::from_json(text).map_err(py_err)?,
            None => SyntheticSpec::planted_desk(funds, factors, months, seed.unwrap_or(0)),
        };
        let seed = seed.unwrap_or(spec.seed);
        Ok(Self {
            inner: polymodel::generate_synthetic(&spec, seed).map_err(py_err)?,
        })
    }

    fn to_csv(&self, funds: PathBuf, factors: PathBuf) -> PyResult<()> {
        polymodel::panel::save_panel(&self.inner, funds, factors).map_err(py_err)
    }

    #[getter]
    fn funds(&self) -> Vec<String> {
        self.inner.funds.iter().map(|f| f.id.clone()).collect()
    }

    #[getter]
    fn factors(&self) -> Vec<String> {
        self.inner.factors.iter().map(|f| f.id.clone()).collect()
    }

    #[getter]
    fn span(&self) -> (String, String) {
        (self.inner.span.0.to_string(), self.inner.span.1.to_string())
    }

    #[getter]
    fn n_months(&self) -> usize {
        self.inner.n_months()
    }

    /// Returns of one fund or factor, `None` where missing.
    fn returns(&self, id: &str) -> PyResult<Vec<Option<f64>>> {
        if let Ok(f) = self.inner.fund(id) {
            return Ok(f.returns.values.clone());
        }
        let x = self.inner.factor(id).map_err(py_err)?;
        Ok(x.returns.values.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel({} funds, {} factors, {}..{})",
            self.inner.funds.len(),
            self.inner.factors.len(),
            self.inner.span.0,
            self.inner.span.1
        )
    }
}

fn parse_stage(name: &str) -> PyResult<Stage> {
    Ok(match name {
        "ingest" => Stage::Ingest,
        "scores" => Stage::Scores,
        "features" => Stage::Features,
        "predictions" => Stage::Predictions,
        "grid" => Stage::Grid,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown stage '{name}' (ingest, scores, features, predictions, grid)"
            )))
        }
    })
}

/// A cached, staged run driven by a JSON config file.
#[pyclass(module = "polymodel_py")]
struct Pipeline {
    inner: pipeline::Pipeline,
    art: Artifacts,
}

impl Pipeline {
    fn ensure(&mut self, stage: Stage) -> PyResult<()> {
        let have = match stage {
            Stage::Ingest => self.art.panel.is_some(),
            Stage::Scores => self.art.scored.is_some(),
            Stage::Features => self.art.features.is_some(),
            Stage::Predictions => self.art.predictions.is_some(),
            Stage::Grid => self.art.report.is_some(),
        };
        if !have {
            self.art = self.inner.run_until(stage).map_err(py_err)?;
        }
        Ok(())
    }
}

#[pymethods]
impl Pipeline {
    /// `out` overrides the config's output directory.
    #[new]
    #[pyo3(signature = (config, out = None, seed = None, n_shuffles = None))]
    fn new(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, n_shuffles: Option<usize>) -> PyResult<Self> {
        let mut cfg = RunConfig::from_path(&config).map_err(py_err)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(n) = n_shuffles {
            cfg.n_shuffles = n;
        }
        let out = out
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("polymodel-out"));
        Ok(Self {
            inner: pipeline::Pipeline::new(cfg, out).map_err(py_err)?,
            art: Artifacts::default(),
        })
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.out.clone()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config.hash()
    }

    /// Runs every stage up to `stage` (default: the full grid).
    #[pyo3(signature = (stage = "grid"))]
    fn run(&mut self, stage: &str) -> PyResult<()> {
        self.art = self.inner.run_until(parse_stage(stage)?).map_err(py_err)?;
        Ok(())
    }

    fn panel(&mut self) -> PyResult<Panel> {
        self.ensure(Stage::Ingest)?;
        Ok(Panel {
            inner: self.art.panel.clone().expect("panel"),
        })
    }

    /// P-Value Scores of every rolling window.
    fn scores<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.ensure(Stage::Scores)?;
        let s: Vec<_> = self.art.scored.as_ref().expect("scores").iter().map(|r| &r.score).collect();
        to_py(py, &s)
    }

    fn features<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.ensure(Stage::Features)?;
        let rows: Vec<_> = self.art.features.as_ref().expect("features").rows().collect();
        to_py(py, &rows)
    }

    fn predictions<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.ensure(Stage::Predictions)?;
        to_py(py, self.art.predictions.as_ref().expect("predictions"))
    }

    /// The grid report: cells, group means and the best performer.
    fn report<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.ensure(Stage::Grid)?;
        to_py(py, self.art.report.as_ref().expect("report"))
    }

    /// One backtest cell: metrics plus the value path.
    #[pyo3(signature = (filters = Vec::new(), ml = false, weighted = false))]
    fn backtest<'py>(
        &mut self,
        py: Python<'py>,
        filters: Vec<String>,
        ml: bool,
        weighted: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        self.ensure(Stage::Predictions)?;
        let enabled = filters
            .iter()
            .map(|f| f.parse::<FilterFeature>())
            .collect::<polymodel::Result<Vec<_>>>()
            .map_err(py_err)?;
        let cfg = &self.inner.config;
        let spec = FilterSpec::with_thresholds(enabled, ml, &cfg.thresholds, cfg.p_threshold);
        let scheme = if weighted { WeightScheme::AumWeighted } else { WeightScheme::Even };
        let preds = self.art.predictions.as_ref().expect("predictions");
        let span = backtest_span(preds).map_err(py_err)?;
        let result = run_backtest(
            self.art.panel.as_ref().expect("panel"),
            self.art.features.as_ref().expect("features"),
            &index_predictions(preds),
            &spec,
            scheme,
            span,
        )
        .map_err(py_err)?;
        let (bench, rf) = load_references(cfg).map_err(py_err)?;
        let metrics = compute_metrics_with(&result, &bench, rf.as_ref(), false).map_err(py_err)?;
        let mut m = serde_json::Map::new();
        m.insert("Filters".into(), spec.label().into());
        m.insert("Using Machine Learning".into(), ml.into());
        m.insert("Weighted".into(), weighted.into());
        m.extend(metrics.table_rows());
        m.insert("value_path".into(), serde_json::to_value(&result.path).map_err(|e| PyValueError::new_err(e.to_string()))?);
        to_py(py, &m)
    }
}

#[pymodule]
fn polymodel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", polymodel::VERSION)?;
    m.add_function(wrap_pyfunction!(hermite, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_fit, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(pvalue_score, m)?)?;
    m.add_function(wrap_pyfunction!(mrar, m)?)?;
    m.add_function(wrap_pyfunction!(max_drawdown, m)?)?;
    m.add_class::<PolyFit>()?;
    m.add_class::<Panel>()?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
