use std::path::PathBuf;

use mobigg::broadcast::simulate_broadcast;
use mobigg::config::{DeterministicPath, SimConfig, Trajectory};
use mobigg::coverage::{build_target, estimate_cover_time, TargetKind};
use mobigg::detection::{simulate_detection, TailCurve};
use mobigg::experiments::{aggregate, run_experiment, ExperimentKind, ExperimentSpec, ResultTable};
use mobigg::graph::GeometricGraph;
use mobigg::percolation::{
    calibrate_lambda_c, check_psi_bound, dense_reference, estimate_perc_tail, run_coupling, CouplingSpec,
};
use mobigg::rng::tag;
use mobigg::sausage::{sausage_volume, sausage_volume_1d_exact, SausageSpec};
use mobigg::{Error, NodeEnsemble, TrialKey};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::CapExceeded(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn trajectory(name: &str, velocity: Option<Vec<f64>>) -> PyResult<Trajectory> {
    match (name, velocity) {
        ("stationary", _) => Ok(Trajectory::Stationary),
        ("brownian", _) => Ok(Trajectory::Brownian),
        ("linear", Some(v)) => Ok(Trajectory::Deterministic(DeterministicPath::linear(v))),
        ("linear", None) => Err(PyValueError::new_err("linear motion needs a velocity")),
        _ => Err(PyValueError::new_err(format!("unknown motion '{name}'"))),
    }
}

/// Model parameters on a boxed observation window.
#[pyclass(name = "SimConfig", skip_from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: SimConfig,
}

#[pymethods]
impl PySimConfig {
    #[new]
    #[pyo3(signature = (d, lam, r, dt, horizon, side=1.0, seed=0))]
    fn new(d: usize, lam: f64, r: f64, dt: f64, horizon: f64, side: f64, seed: u64) -> PyResult<Self> {
        let inner = SimConfig::boxed(d, lam, r, dt, horizon, side, seed);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "SimConfig(d={}, lam={}, r={}, dt={}, horizon={}, seed={})",
            c.d, c.lambda, c.r, c.dt, c.horizon, c.seed
        )
    }
}

/// Survival curve `P(T > t)` with binomial standard errors.
#[pyclass(name = "TailCurve", skip_from_py_object)]
struct PyTailCurve {
    inner: TailCurve,
}

#[pymethods]
impl PyTailCurve {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn survival(&self) -> Vec<f64> {
        self.inner.survival.clone()
    }

    #[getter]
    fn std_error(&self) -> Vec<f64> {
        self.inner.std_error.clone()
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    /// `(survival, std_error)` at the reported time nearest to `t`.
    fn at(&self, t: f64) -> Option<(f64, f64)> {
        self.inner.at(t)
    }

    fn __len__(&self) -> usize {
        self.inner.times.len()
    }
}

#[pyfunction]
#[pyo3(signature = (config, trials, target="stationary", velocity=None))]
fn detection_tail(
    py: Python<'_>,
    config: &PySimConfig,
    trials: usize,
    target: &str,
    velocity: Option<Vec<f64>>,
) -> PyResult<PyTailCurve> {
    let g = trajectory(target, velocity)?;
    let cfg = config.inner.clone();
    let inner = py.detach(|| simulate_detection(&cfg, &g, trials)).map_err(py_err)?;
    Ok(PyTailCurve { inner })
}

/// Mean sausage volume and its standard error.
#[pyfunction]
#[pyo3(signature = (d, r, t, paths, dt, seed=0))]
fn sausage_mean(py: Python<'_>, d: usize, r: f64, t: f64, paths: usize, dt: f64, seed: u64) -> PyResult<(f64, f64)> {
    let est = py
        .detach(|| sausage_volume(&SausageSpec::new(d, r, t, seed), paths, dt))
        .map_err(py_err)?;
    Ok((est.mean, est.std_error))
}

#[pyfunction]
fn sausage_exact_1d(r: f64, t: f64) -> f64 {
    sausage_volume_1d_exact(r, t)
}

/// Connected-component label of each point (flat `n * d` coordinates).
#[pyfunction]
fn components(points: Vec<f64>, d: usize, r: f64) -> PyResult<Vec<u32>> {
    if d == 0 || !points.len().is_multiple_of(d) {
        return Err(PyValueError::new_err("points must be a flat list with a multiple of d entries"));
    }
    let ens = NodeEnsemble::from_positions(d, points, TrialKey::new(0, 0));
    let g = GeometricGraph::build(&ens, r).map_err(py_err)?;
    Ok(g.labels().to_vec())
}

/// Mean cover time, its standard error and the censored count.
#[pyfunction]
#[pyo3(signature = (config, kind, scale, epsilon, trials))]
fn cover_time(
    py: Python<'_>,
    config: &PySimConfig,
    kind: &str,
    scale: f64,
    epsilon: f64,
    trials: usize,
) -> PyResult<(f64, f64, usize)> {
    let kind = match kind {
        "point" => TargetKind::Point,
        "segment" => TargetKind::Segment,
        "cube" => TargetKind::Cube,
        "ball" => TargetKind::Ball,
        _ => return Err(PyValueError::new_err(format!("unknown set '{kind}'"))),
    };
    let cfg = config.inner.clone();
    let est = py
        .detach(|| {
            let set = build_target(kind, cfg.d, scale, epsilon)?;
            estimate_cover_time(&set, &cfg, trials)
        })
        .map_err(py_err)?;
    Ok((est.mean, est.std_error, est.censored))
}

/// Critical intensity estimate `(estimate, ci_low, ci_high)`.
#[pyfunction]
#[pyo3(signature = (d, r, side, trials, seed=0))]
fn lambda_c(py: Python<'_>, d: usize, r: f64, side: f64, trials: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let est = py.detach(|| calibrate_lambda_c(d, r, side, trials, seed)).map_err(py_err)?;
    Ok((est.estimate, est.ci_low, est.ci_high))
}

/// Fraction of trials whose stationary target reached the crossing component.
#[pyfunction]
#[pyo3(signature = (config, side, trials, horizon))]
fn percolated_fraction(py: Python<'_>, config: &PySimConfig, side: f64, trials: usize, horizon: usize) -> PyResult<f64> {
    let cfg = config.inner.clone();
    let tail = py
        .detach(|| estimate_perc_tail(&cfg, side, trials, horizon, &Trajectory::Stationary, None))
        .map_err(py_err)?;
    Ok(tail.percolated_fraction())
}

/// Broadcast times per trial (`None` when the step cap was hit).
#[pyfunction]
#[pyo3(signature = (n, lam, r, d, trials, seed=0, max_steps=10_000))]
#[allow(clippy::too_many_arguments)]
fn broadcast_times(
    py: Python<'_>,
    n: f64,
    lam: f64,
    r: f64,
    d: usize,
    trials: usize,
    seed: u64,
    max_steps: usize,
) -> PyResult<Vec<Option<usize>>> {
    let s = py
        .detach(|| simulate_broadcast(n, lam, r, d, trials, seed, None, max_steps))
        .map_err(py_err)?;
    Ok(s.trials.iter().map(|t| t.t_broad).collect())
}

/// One coupling run: `(success, subset_exact, xi_count)`.
#[pyfunction]
#[pyo3(signature = (d, beta, ell, eps, k_prime, phi_lambda, seed=0))]
#[allow(clippy::too_many_arguments)]
fn couple(
    py: Python<'_>,
    d: usize,
    beta: f64,
    ell: f64,
    eps: f64,
    k_prime: f64,
    phi_lambda: f64,
    seed: u64,
) -> PyResult<(bool, bool, usize)> {
    let out = py
        .detach(|| {
            let spec = CouplingSpec::standard(d, beta, ell, eps, k_prime);
            let key = TrialKey::new(seed, 0);
            let phi = dense_reference(&spec, phi_lambda, &key.child(tag::POINTS, 0))?;
            run_coupling(&spec, &phi, &key)
        })
        .map_err(py_err)?;
    Ok((out.success, out.diagnostics.subset_exact, out.xi.len()))
}

/// `∫_{B(0,R)} g` and whether it clears `1 - eps/2` (None outside the hypotheses).
#[pyfunction]
fn psi_bound(d: usize, eps: f64, rho: f64, delta: f64, radius: f64) -> PyResult<(f64, Option<bool>)> {
    let rep = check_psi_bound(d, eps, rho, delta, radius).map_err(py_err)?;
    Ok((rep.integral, rep.pass))
}

/// Runs an experiment from config text; returns `(columns, rows)`.
#[pyfunction]
#[pyo3(signature = (kind, config, seed, out, threads=None))]
fn run(
    py: Python<'_>,
    kind: &str,
    config: &str,
    seed: u64,
    out: PathBuf,
    threads: Option<usize>,
) -> PyResult<(Vec<String>, Vec<Vec<String>>)> {
    let kind: ExperimentKind = kind.parse().map_err(py_err)?;
    let mut spec = ExperimentSpec::from_config_text(kind, config, seed, out).map_err(py_err)?;
    if let Some(n) = threads {
        spec = spec.with_threads(n);
    }
    let t = py.detach(|| run_experiment(&spec)).map_err(py_err)?;
    Ok((t.schema, t.rows))
}

/// Pools CSV outputs; returns summary rows `(column, count, missing, mean, std_error)`.
#[pyfunction]
fn aggregate_csv(paths: Vec<PathBuf>) -> PyResult<Vec<Vec<String>>> {
    let tables = paths
        .iter()
        .map(|p| ResultTable::read_csv(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    Ok(aggregate(&tables).map_err(py_err)?.rows)
}

#[pymodule]
fn pymobigg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyTailCurve>()?;
    m.add_function(wrap_pyfunction!(detection_tail, m)?)?;
    m.add_function(wrap_pyfunction!(sausage_mean, m)?)?;
    m.add_function(wrap_pyfunction!(sausage_exact_1d, m)?)?;
    m.add_function(wrap_pyfunction!(components, m)?)?;
    m.add_function(wrap_pyfunction!(cover_time, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_c, m)?)?;
    m.add_function(wrap_pyfunction!(percolated_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(broadcast_times, m)?)?;
    m.add_function(wrap_pyfunction!(couple, m)?)?;
    m.add_function(wrap_pyfunction!(psi_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_csv, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
