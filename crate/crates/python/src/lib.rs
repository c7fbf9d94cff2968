//! Python bindings: metrics, objectives, the two agent families, and the
//! experiment runner driven by the same config files as the CLI.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use eqpm::agents::{self, ChargingContext, DataCenterContext};
use eqpm::experiment::{self, ConfigFormat, ExperimentConfig, RunStatus};
use eqpm::training::{Forecaster as CoreForecaster, RunSummary};
use eqpm::{checkpoint, metrics, objective, verify};

create_exception!(eqpm_py, EqpmError, PyException);
create_exception!(eqpm_py, DivergenceError, EqpmError);

fn py_err(e: eqpm::Error) -> PyErr {
    match e {
        eqpm::Error::Divergence { .. } | eqpm::Error::NonConvergence(_) => DivergenceError::new_err(e.to_string()),
        other => EqpmError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for eqpm::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyfunction]
fn variance(values: Vec<f64>) -> PyResult<f64> {
    metrics::variance(&values).or_py()
}

#[pyfunction]
#[pyo3(signature = (values, lo = 0.05, hi = 0.95))]
fn percentile_gap(values: Vec<f64>, lo: f64, hi: f64) -> PyResult<f64> {
    metrics::percentile_gap(&values, lo, hi).or_py()
}

#[pyfunction]
#[pyo3(signature = (values, exponent = 1.0))]
fn norm_entropy(values: Vec<f64>, exponent: f64) -> PyResult<f64> {
    metrics::norm_entropy(&values, exponent).or_py()
}

/// Sum of mean regrets raised to `q + 1`.
#[pyfunction]
fn equitable_loss(mean_regrets: Vec<f64>, q: f64) -> PyResult<f64> {
    objective::equitable_loss(&mean_regrets, q).or_py()
}

#[pyfunction]
fn dual_norm_value(mean_regrets: Vec<f64>, q: f64) -> PyResult<f64> {
    objective::dual_norm_value(&mean_regrets, q).or_py()
}

#[pyfunction]
fn holder_maximizer(mean_regrets: Vec<f64>, q: f64) -> PyResult<Vec<f64>> {
    objective::holder_maximizer(&mean_regrets, q).or_py()
}

/// `(allocation, cost)` of a data center that knows the intensity `c`.
#[pyfunction]
fn dc_optimal(workload: f64, lam: f64, c: f64) -> PyResult<(f64, f64)> {
    let ctx = DataCenterContext::new(workload, lam).or_py()?;
    let (action, cost) = agents::dc_optimal(&ctx, c).or_py()?;
    Ok((action.allocation().expect("allocation"), cost))
}

/// Allocation chosen under the forecast `c_hat`.
#[pyfunction]
fn dc_act(workload: f64, lam: f64, c_hat: f64) -> PyResult<f64> {
    let ctx = DataCenterContext::new(workload, lam).or_py()?;
    Ok(agents::dc_act(&ctx, c_hat).allocation().expect("allocation"))
}

#[pyfunction]
fn dc_cost(workload: f64, lam: f64, allocation: f64, c: f64) -> PyResult<f64> {
    let ctx = DataCenterContext::new(workload, lam).or_py()?;
    agents::dc_cost(&ctx, allocation, c).or_py()
}

/// `(schedule, cost)` of the cheapest charging plan over `signal`.
#[pyfunction]
#[pyo3(signature = (initial, demand, rate, signal))]
fn ev_optimal(initial: f64, demand: f64, rate: f64, signal: Vec<f64>) -> PyResult<(Vec<u32>, f64)> {
    let ctx = ChargingContext {
        initial,
        demand,
        rate,
        horizon: signal.len(),
        gamma: 0.0,
        eta: 0.0,
    };
    let (action, cost) = agents::ev_optimal(&ctx, &signal).or_py()?;
    // A list of ints rather than `bytes`.
    let x = action.schedule().expect("schedule").iter().map(|&v| u32::from(v)).collect();
    Ok((x, cost))
}

#[pyclass(module = "eqpm_py", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    /// Defaults, or parsed from `text` (`format` is "json" or "toml").
    #[new]
    #[pyo3(signature = (text = None, format = "json"))]
    fn new(text: Option<&str>, format: &str) -> PyResult<Self> {
        let inner = match text {
            None => ExperimentConfig::default(),
            Some(t) => {
                let fmt = match format {
                    "json" => ConfigFormat::Json,
                    "toml" => ConfigFormat::Toml,
                    other => return Err(EqpmError::new_err(format!("unknown config format {other:?}"))),
                };
                let cfg = ExperimentConfig::parse(t, fmt).or_py()?;
                cfg.validate().or_py()?;
                cfg
            }
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(&path).or_py()?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn output(&self) -> PathBuf {
        self.inner.output.clone()
    }

    #[setter]
    fn set_output(&mut self, output: PathBuf) {
        self.inner.output = output;
    }

    fn config_hash(&self) -> String {
        self.inner.hash()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| EqpmError::new_err(e.to_string()))
    }
}

#[pyclass(module = "eqpm_py", frozen)]
struct Summary {
    inner: RunSummary,
}

#[pymethods]
impl Summary {
    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn c95_minus_c5(&self) -> f64 {
        self.inner.c95_minus_c5
    }

    #[getter]
    fn mse(&self) -> f64 {
        self.inner.mse
    }

    #[getter]
    fn entropy(&self) -> f64 {
        self.inner.entropy
    }

    #[getter]
    fn mean_regrets(&self) -> Vec<f64> {
        self.inner.mean_regrets.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| EqpmError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Summary(variance={:.4e}, mean={:.4e}, c95_minus_c5={:.4e}, mse={:.4e}, entropy={:.4})",
            self.inner.variance, self.inner.mean, self.inner.c95_minus_c5, self.inner.mse, self.inner.entropy
        )
    }
}

fn summary(inner: RunSummary) -> Summary {
    Summary { inner }
}

#[pyclass(module = "eqpm_py", frozen)]
struct Forecaster {
    inner: CoreForecaster,
}

#[pymethods]
impl Forecaster {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(&path).or_py()?,
        })
    }

    #[getter]
    fn lookback(&self) -> usize {
        self.inner.lookback
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Forecast from the last `lookback` raw signal values.
    #[pyo3(signature = (window, agent = 0))]
    fn predict(&self, window: Vec<f64>, agent: usize) -> PyResult<Vec<f64>> {
        self.inner.predict_raw(&window, agent).or_py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path, None).or_py()
    }
}

#[pyclass(module = "eqpm_py", frozen)]
struct TrainResult {
    #[pyo3(get)]
    summary: Py<Summary>,
    #[pyo3(get)]
    reference: Option<Py<Summary>>,
    #[pyo3(get)]
    model: Py<Forecaster>,
    #[pyo3(get)]
    losses: Vec<f64>,
}

/// Train on `config` (reference run first when configured). Writes the usual
/// output files when `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn train(py: Python<'_>, config: &Config, out: Option<PathBuf>) -> PyResult<TrainResult> {
    let cfg = config.inner.clone();
    let report = py.detach(|| experiment::run_train(&cfg)).or_py()?;
    if let Some(dir) = out {
        experiment::write_train_outputs(&cfg, &report, &dir).or_py()?;
    }
    Ok(TrainResult {
        summary: Py::new(py, summary(report.main.summary))?,
        reference: report.reference.map(|r| Py::new(py, summary(r.summary))).transpose()?,
        losses: report.main.steps.iter().map(|s| s.loss).collect(),
        model: Py::new(py, Forecaster {
            inner: report.main.model,
        })?,
    })
}

/// Evaluate the configured checkpoint on the test split.
#[pyfunction]
fn evaluate(py: Python<'_>, config: &Config) -> PyResult<Summary> {
    let cfg = config.inner.clone();
    Ok(summary(py.detach(|| experiment::run_evaluate(&cfg)).or_py()?))
}

/// Rows `(q_plus_1, beta, seed, summary or None, error or None)` in grid order.
#[pyfunction]
#[pyo3(signature = (config, jobs = 1, out = None))]
#[allow(clippy::type_complexity)]
fn sweep(
    py: Python<'_>,
    config: &Config,
    jobs: usize,
    out: Option<PathBuf>,
) -> PyResult<Vec<(f64, f64, u64, Option<Summary>, Option<String>)>> {
    let cfg = config.inner.clone();
    let report = py.detach(|| experiment::run_sweep(&cfg, jobs)).or_py()?;
    if let Some(dir) = out {
        experiment::write_sweep_outputs(&cfg, &report, &dir).or_py()?;
    }
    Ok(report
        .rows
        .into_iter()
        .map(|r| {
            let s = match r.status {
                RunStatus::Ok => r.summary.map(summary),
                RunStatus::Failed => None,
            };
            (r.q_plus_1, r.beta, r.seed, s, r.error)
        })
        .collect())
}

/// Write the synthetic dataset under `out/data`; returns the heterogeneity summary as JSON.
#[pyfunction]
fn generate(py: Python<'_>, config: &Config, out: PathBuf) -> PyResult<String> {
    let cfg = config.inner.clone();
    let h = py.detach(|| experiment::run_generate(&cfg, &out)).or_py()?;
    serde_json::to_string(&h).map_err(|e| EqpmError::new_err(e.to_string()))
}

/// `(name, passed, measured, tolerance)` for each numeric check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn run_verify(py: Python<'_>, seed: u64) -> Vec<(String, bool, f64, f64)> {
    let report = py.detach(|| verify::run_all(&verify::Oracles::default(), seed));
    report
        .suites
        .into_iter()
        .map(|s| (s.name, s.passed, s.measured, s.tolerance))
        .collect()
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("EqpmError", py.get_type::<EqpmError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    m.add_class::<Config>()?;
    m.add_class::<Summary>()?;
    m.add_class::<Forecaster>()?;
    m.add_class::<TrainResult>()?;
    for f in [
        wrap_pyfunction!(variance, m)?,
        wrap_pyfunction!(percentile_gap, m)?,
        wrap_pyfunction!(norm_entropy, m)?,
        wrap_pyfunction!(equitable_loss, m)?,
        wrap_pyfunction!(dual_norm_value, m)?,
        wrap_pyfunction!(holder_maximizer, m)?,
        wrap_pyfunction!(dc_optimal, m)?,
        wrap_pyfunction!(dc_act, m)?,
        wrap_pyfunction!(dc_cost, m)?,
        wrap_pyfunction!(ev_optimal, m)?,
        wrap_pyfunction!(train, m)?,
        wrap_pyfunction!(evaluate, m)?,
        wrap_pyfunction!(sweep, m)?,
        wrap_pyfunction!(generate, m)?,
        wrap_pyfunction!(run_verify, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}

#[pymodule]
fn eqpm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
