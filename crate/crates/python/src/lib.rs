//! Python bindings: run configurations, the experiment drivers, the Morse
//! benchmark and a few linear-algebra primitives.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyTuple};

use qsd_core::harness::{self, HarnessError, RunConfig, Solver};
use qsd_core::linalg::{self, ComplexMatrix};
use qsd_core::morse;
use qsd_core::propagator::propagate_trajectory;
use qsd_core::wiener::RngStream;

create_exception!(qsd, ConfigError, PyValueError);
create_exception!(qsd, DivergedError, PyRuntimeError);
create_exception!(qsd, PrecisionError, PyRuntimeError);

fn py_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(_) => ConfigError::new_err(e.to_string()),
        HarnessError::Diverged(_) => DivergedError::new_err(e.to_string()),
        HarnessError::InsufficientPrecision(_) => PrecisionError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix_from_rows(rows: Vec<Vec<Complex64>>) -> PyResult<ComplexMatrix> {
    ComplexMatrix::from_rows(&rows).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix_rows(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    let d = m.dim();
    (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
}

/// Python values become config strings: bools lower-cased, sequences
/// comma-joined, everything else through `str()`.
fn config_text(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = value.cast::<PyBool>() {
        return Ok(b.is_true().to_string());
    }
    if value.is_instance_of::<PyList>() || value.is_instance_of::<PyTuple>() {
        let parts = value
            .try_iter()?
            .map(|item| config_text(&item?))
            .collect::<PyResult<Vec<_>>>()?;
        return Ok(parts.join(","));
    }
    Ok(value.str()?.to_string())
}

/// Run configuration. Keyword arguments use the config-file keys.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: RunConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.set(&k.extract::<String>()?, &v)?;
            }
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        RunConfig::from_file(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &config_text(value)?).map_err(py_err)
    }

    /// Returns `(dt, steps_per_macro, n_macro)`.
    fn validate(&self) -> PyResult<(f64, usize, usize)> {
        let g = self.inner.validate().map_err(py_err)?;
        Ok((g.dt, g.steps_per_macro, g.n_macro))
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.model.to_string()
    }

    #[getter]
    fn solver(&self) -> String {
        self.inner.solver.to_string()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.t_final
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    #[getter]
    fn samples(&self) -> u64 {
        self.inner.samples
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn observables(&self) -> Vec<String> {
        self.inner.observables.iter().map(|o| o.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(model={}, solver={}, dt={}, t_final={}, samples={}, seed={})",
            self.inner.model, self.inner.solver, self.inner.dt, self.inner.t_final, self.inner.samples, self.inner.seed
        )
    }
}

#[pyclass(name = "EnsembleSeries", get_all, frozen)]
struct PyEnsemble {
    times: Vec<f64>,
    observables: Vec<String>,
    /// `mean[k][j]`: observable `j` at time `k`.
    mean: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    halfwidth: Vec<Vec<f64>>,
    n_samples: u64,
}

#[pymethods]
impl PyEnsemble {
    /// `(mean, std, halfwidth)` time series of one observable.
    fn series(&self, name: &str) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let j = self
            .observables
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| PyValueError::new_err(format!("no observable '{name}'")))?;
        let col = |t: &Vec<Vec<f64>>| t.iter().map(|r| r[j]).collect();
        Ok((col(&self.mean), col(&self.std), col(&self.halfwidth)))
    }
}

#[pyclass(name = "ReferenceSeries", get_all, frozen)]
struct PyReference {
    times: Vec<f64>,
    observables: Vec<String>,
    values: Vec<Vec<f64>>,
    max_trace_error: f64,
}

#[pyclass(name = "ConvergenceReport", get_all, frozen)]
struct PyConvergence {
    observable: String,
    t_final: f64,
    oracle: f64,
    dts: Vec<f64>,
    estimates: Vec<f64>,
    abs_errors: Vec<f64>,
    halfwidths: Vec<f64>,
    bias_dominated: Vec<bool>,
    slope: f64,
    intercept: f64,
}

#[pyfunction]
fn run_reference(py: Python<'_>, config: &PyConfig) -> PyResult<PyReference> {
    let cfg = config.inner.clone();
    let r = py.detach(move || harness::run_reference(&cfg)).map_err(py_err)?;
    Ok(PyReference {
        times: r.series.times,
        observables: r.observables,
        values: r.series.values,
        max_trace_error: r.series.max_trace_error,
    })
}

#[pyfunction]
fn run_ensemble(py: Python<'_>, config: &PyConfig) -> PyResult<PyEnsemble> {
    let cfg = config.inner.clone();
    let s = py.detach(move || harness::run_ensemble(&cfg)).map_err(py_err)?;
    Ok(PyEnsemble {
        times: s.times,
        observables: s.observables,
        mean: s.mean,
        std: s.std,
        halfwidth: s.halfwidth,
        n_samples: s.n_samples,
    })
}

/// Raises `PrecisionError` when fewer than two step sizes are bias-dominated.
#[pyfunction]
fn run_convergence(py: Python<'_>, config: &PyConfig, dts: Vec<f64>) -> PyResult<PyConvergence> {
    let cfg = config.inner.clone();
    let r = py
        .detach(move || harness::run_convergence(&cfg, &dts))
        .map_err(|(e, _)| py_err(e))?;
    let (slope, intercept) = r.fit.unwrap_or((f64::NAN, f64::NAN));
    Ok(PyConvergence {
        observable: r.observable,
        t_final: r.t_final,
        oracle: r.oracle,
        dts: r.points.iter().map(|p| p.dt).collect(),
        estimates: r.points.iter().map(|p| p.estimate).collect(),
        abs_errors: r.points.iter().map(|p| p.abs_error).collect(),
        halfwidths: r.points.iter().map(|p| p.mc_halfwidth).collect(),
        bias_dominated: r.points.iter().map(|p| p.bias_dominated).collect(),
        slope,
        intercept,
    })
}

/// Rows of `(cell, expected, estimate, se_re, se_im, passed)`.
#[pyfunction]
#[pyo3(signature = (n_lindblad, dt, n_draws, seed = 1))]
fn run_integral_audit(
    py: Python<'_>,
    n_lindblad: usize,
    dt: f64,
    n_draws: u64,
    seed: u64,
) -> PyResult<Vec<(String, Complex64, Complex64, f64, f64, bool)>> {
    let r = py
        .detach(move || harness::run_integral_audit(n_lindblad, dt, n_draws, seed))
        .map_err(py_err)?;
    Ok(r.cells
        .into_iter()
        .map(|c| (c.cell, c.expected, c.estimate, c.se.0, c.se.1, c.pass))
        .collect())
}

/// Rows of `(dt, diverged, time, trajectory)`.
#[pyfunction]
fn run_stability_probe(
    py: Python<'_>,
    config: &PyConfig,
    dts: Vec<f64>,
) -> PyResult<Vec<(f64, bool, Option<f64>, Option<u64>)>> {
    let cfg = config.inner.clone();
    let rows = py
        .detach(move || harness::run_stability_probe(&cfg, &dts))
        .map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.dt, r.diverged, r.time, r.trajectory)).collect())
}

/// One trajectory, number `trajectory` of the configured seed, as
/// `(times, values[k][j])`.
#[pyfunction]
#[pyo3(signature = (config, trajectory = 0))]
fn run_trajectory(py: Python<'_>, config: &PyConfig, trajectory: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let cfg = config.inner.clone();
    py.detach(move || {
        let grid = cfg.validate()?;
        let Solver::Stochastic(scheme) = cfg.solver else {
            return Err(HarnessError::Config("a trajectory needs a stochastic solver".into()));
        };
        let setup = cfg.build_model()?;
        let mut rng = RngStream::new(cfg.seed, trajectory);
        let rec = propagate_trajectory(&setup.system, &setup.initial, scheme, grid, &mut rng, &setup.operators)
            .map_err(|source| qsd_core::propagator::TrajectoryFailure { trajectory, source })?;
        Ok((rec.times, rec.values))
    })
    .map_err(py_err)
}

/// Eigenvalues (ascending) and eigenvectors (as columns) of a Hermitian matrix.
#[pyfunction]
fn hermitian_eig(matrix: Vec<Vec<Complex64>>) -> PyResult<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let m = matrix_from_rows(matrix)?;
    let eig = linalg::hermitian_eig(&m).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((eig.values().to_vec(), matrix_rows(eig.vectors())))
}

/// `A(t)_{mn} = exp(i (E_m - E_n) t) A_{mn}`
#[pyfunction]
fn phase_rotate(matrix: Vec<Vec<Complex64>>, energies: Vec<f64>, t: f64) -> PyResult<Vec<Vec<Complex64>>> {
    let m = matrix_from_rows(matrix)?;
    if energies.len() != m.dim() {
        return Err(PyValueError::new_err("energies and matrix differ in dimension"));
    }
    Ok(matrix_rows(&linalg::phase_rotate(&m, &energies, t)))
}

/// The grid Morse oscillator with its thermal bath, in the eigenbasis.
#[pyclass(name = "MorseModel", frozen)]
struct PyMorse {
    inner: morse::MorseModel,
}

#[pymethods]
impl PyMorse {
    #[new]
    #[pyo3(signature = (driven = false))]
    fn new(driven: bool) -> Self {
        Self {
            inner: if driven {
                morse::MorseModel::driven()
            } else {
                morse::MorseModel::free()
            },
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.system.dim()
    }

    #[getter]
    fn energies(&self) -> Vec<f64> {
        self.inner.system.energies().to_vec()
    }

    #[getter]
    fn omega_b(&self) -> f64 {
        self.inner.omega_b()
    }

    /// `(up, down)` bath rates.
    #[getter]
    fn rates(&self) -> (f64, f64) {
        morse::bath_rates(&self.inner.params, self.inner.omega_b())
    }

    #[getter]
    fn initial_state(&self) -> Vec<Complex64> {
        self.inner.initial.to_vec()
    }

    #[getter]
    fn lindblads(&self) -> Vec<Vec<Vec<Complex64>>> {
        self.inner.system.lindblads().iter().map(matrix_rows).collect()
    }

    #[getter]
    fn position(&self) -> Vec<Vec<Complex64>> {
        matrix_rows(&self.inner.position)
    }

    #[getter]
    fn driven(&self) -> bool {
        self.inner.system.drive().is_some()
    }
}

#[pymodule]
fn qsd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyReference>()?;
    m.add_class::<PyConvergence>()?;
    m.add_class::<PyMorse>()?;
    m.add_function(wrap_pyfunction!(run_reference, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(run_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_integral_audit, m)?)?;
    m.add_function(wrap_pyfunction!(run_stability_probe, m)?)?;
    m.add_function(wrap_pyfunction!(run_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(hermitian_eig, m)?)?;
    m.add_function(wrap_pyfunction!(phase_rotate, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DivergedError", m.py().get_type::<DivergedError>())?;
    m.add("PrecisionError", m.py().get_type::<PrecisionError>())?;
    Ok(())
}
