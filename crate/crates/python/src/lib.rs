//! Python bindings. Structured inputs and outputs cross the boundary as JSON
//! (the same schema the CLI reads), returned to Python as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use coagdiff::cli::{self, RunConfig};
use coagdiff::error::Error;
use coagdiff::experiments::{self, Experiment, McOptions, Regime, System};
use coagdiff::kernels::{self, MassKernel};
use coagdiff::smoluchowski::{self, CoagTable, InitialCondition, MassGrid, SolverConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// Brownian collision constant `2π^{d/2}/Γ(d/2 - 1)`.
#[pyfunction]
fn c_brownian(d: usize) -> PyResult<f64> {
    kernels::c_brownian(d).map_err(py_err)
}

/// Ballistic collision constant `π^{(d-1)/2}/Γ(d/2)`.
#[pyfunction]
fn c_ou(d: usize) -> PyResult<f64> {
    kernels::c_ou(d).map_err(py_err)
}

/// `(r/dist)^{d-2}`.
#[pyfunction]
fn ever_collide_probability(d: usize, r: f64, dist: f64) -> PyResult<f64> {
    experiments::ever_collide_probability(d, r, dist).map_err(py_err)
}

/// One collision experiment (regime, particle system, test function).
#[pyclass(name = "Experiment", module = "coagdiff_py")]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Experiment = from_json("experiment", text)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Built-in preset for `"ever-collide"`, `"brownian"`, `"ou-fast"` or `"ou-slow"`.
    #[staticmethod]
    fn preset(regime: &str) -> PyResult<Self> {
        let regime: Regime = from_json("regime", &format!("\"{regime}\""))?;
        Ok(Self {
            inner: cli::preset_experiment(regime),
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn regime(&self) -> &'static str {
        self.inner.regime.tag()
    }

    /// Limit value the scaled estimate should approach.
    fn reference(&self) -> PyResult<f64> {
        self.inner.reference().map_err(py_err)
    }

    /// Monte Carlo estimate; releases the GIL while paths run.
    #[pyo3(signature = (n_paths, seed=None))]
    fn estimate(&self, py: Python<'_>, n_paths: u64, seed: Option<u64>) -> PyResult<Py<PyAny>> {
        let mut exp = self.inner.clone();
        if let Some(s) = seed {
            match &mut exp.system {
                System::Brownian { pair, .. } => pair.seed = s,
                System::Ou { pair } => pair.seed = s,
            }
        }
        let est = py
            .detach(|| experiments::mc_estimate(&exp, &McOptions::paths(n_paths)))
            .map_err(py_err)?;
        to_py(py, &est)
    }

    fn __repr__(&self) -> String {
        format!("Experiment(regime={:?}, d={}, r_n={:e})", self.inner.regime.tag(), self.inner.system.d(), self.inner.system.r_n())
    }
}

/// Coagulation–diffusion solver on a periodic box.
#[pyclass(name = "Solver", module = "coagdiff_py")]
struct PySolver {
    inner: smoluchowski::Solver,
}

#[pymethods]
impl PySolver {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg: SolverConfig = from_json("solver config", config_json)?;
        Ok(Self {
            inner: smoluchowski::Solver::new(cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.inner.grid.mass.masses()
    }

    /// Runs from `initial_json` (e.g. `{"kind": "uniform", "bins": [1.0]}`)
    /// and returns per-record totals plus the moment monitor report.
    #[pyo3(signature = (initial_json, t_end, dt, record_every=1))]
    fn run(&self, py: Python<'_>, initial_json: &str, t_end: f64, dt: f64, record_every: usize) -> PyResult<Py<PyAny>> {
        let init: InitialCondition = from_json("initial condition", initial_json)?;
        let solver = &self.inner;
        let (path, report) = py
            .detach(|| -> coagdiff::error::Result<_> {
                let mu0 = init.build(solver.grid)?;
                let path = solver.run(&mu0, t_end, dt, record_every)?;
                let report = smoluchowski::moment_monitor(solver, &path)?;
                Ok((path, report))
            })
            .map_err(py_err)?;
        #[derive(Serialize)]
        struct RunOut<'a> {
            times: &'a [f64],
            overflow_mass: Vec<f64>,
            clipped_mass: f64,
            final_field: &'a [f64],
            monitor: &'a smoluchowski::MomentReport,
        }
        to_py(
            py,
            &RunOut {
                times: &path.times,
                overflow_mass: path.overflow.iter().map(|o| o.mass).collect(),
                clipped_mass: path.clipped_mass,
                final_field: path.fields.last().map(|v| v.as_slice()).unwrap_or(&[]),
                monitor: &report,
            },
        )
    }
}

/// Space-homogeneous pivot equations integrated by adaptive Dormand–Prince.
#[pyfunction]
#[pyo3(signature = (kernel_json, rho, bins, mu0, times, delta=1.0, rtol=1e-10, atol=1e-14))]
#[allow(clippy::too_many_arguments)]
fn homogeneous_oracle(
    py: Python<'_>,
    kernel_json: &str,
    rho: f64,
    bins: usize,
    mu0: Vec<f64>,
    times: Vec<f64>,
    delta: f64,
    rtol: f64,
    atol: f64,
) -> PyResult<Py<PyAny>> {
    let kernel: MassKernel = from_json("kernel", kernel_json)?;
    let grid = MassGrid::new(delta, rho, bins).map_err(py_err)?;
    let table = CoagTable::new(&kernel, &grid);
    let mut start = mu0;
    start.resize(bins, 0.0);
    let tr = py
        .detach(|| smoluchowski::homogeneous_oracle(&table, &start, &times, rtol, atol))
        .map_err(py_err)?;
    to_py(py, &tr)
}

/// Runs a CLI config (JSON text) into `out_dir`; returns the run summary.
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str, out_dir: PathBuf) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_json(config_json).and_then(RunConfig::resolve).map_err(py_err)?;
    let summary = py.detach(|| cli::run(&cfg, &out_dir)).map_err(py_err)?;
    to_py(py, &summary)
}

#[pymodule]
fn coagdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(c_brownian, m)?)?;
    m.add_function(wrap_pyfunction!(c_ou, m)?)?;
    m.add_function(wrap_pyfunction!(ever_collide_probability, m)?)?;
    m.add_function(wrap_pyfunction!(homogeneous_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_class::<PyExperiment>()?;
    m.add_class::<PySolver>()?;
    Ok(())
}
