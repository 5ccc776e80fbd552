//! Python bindings for the wsmimo simulator.
//!
//! Matrices cross the boundary as nested lists of `complex` (row-major);
//! structured results come back as plain dicts.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use wsmimo::analysis::{ambiguity, AfGrid, AfPlane};
use wsmimo::completion::{noise_delta, relative_error, svt_complete, SvtParams};
use wsmimo::estimation::Axis;
use wsmimo::harness::{self, ExperimentConfig};
use wsmimo::scene::{MatrixState, PulseDataMatrix, SampleMask};
use wsmimo::waveform::{effective_bandwidth, hadamard_codes};
use wsmimo::Error;

fn to_py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

fn to_rows(m: &faer::Mat<Complex64>) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &[Vec<Complex64>]) -> PyResult<faer::Mat<Complex64>> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(faer::Mat::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

/// Experiment configuration. Construct from TOML text or use the defaults.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => ExperimentConfig::from_toml(text).map_err(to_py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::load(&path).map_err(to_py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py_err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_dict(py, &self.inner)
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, v: u64) {
        self.inner.master_seed = v;
    }

    #[getter]
    fn trials(&self) -> u64 {
        self.inner.trials
    }

    #[setter]
    fn set_trials(&mut self, v: u64) -> PyResult<()> {
        if v == 0 {
            return Err(PyValueError::new_err("trials must be at least 1"));
        }
        self.inner.trials = v;
        Ok(())
    }

    #[getter]
    fn snr_db(&self) -> Vec<f64> {
        self.inner.sweep.snr_db.clone()
    }

    #[setter]
    fn set_snr_db(&mut self, v: Vec<f64>) {
        self.inner.sweep.snr_db = v;
    }

    #[getter]
    fn sampling_rate(&self) -> Vec<f64> {
        self.inner.sweep.sampling_rate.clone()
    }

    #[setter]
    fn set_sampling_rate(&mut self, v: Vec<f64>) {
        self.inner.sweep.sampling_rate = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(name={:?}, trials={}, master_seed={})",
            self.inner.name, self.inner.trials, self.inner.master_seed
        )
    }
}

/// One pair's pulses × fast-time matrix, possibly partially observed.
#[pyclass(name = "PulseData")]
#[derive(Clone)]
struct PyPulseData {
    inner: PulseDataMatrix,
}

#[pymethods]
impl PyPulseData {
    #[getter]
    fn pair(&self) -> (usize, usize) {
        self.inner.pair()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn state(&self) -> &'static str {
        match self.inner.state() {
            MatrixState::Clean => "clean",
            MatrixState::Noisy => "noisy",
            MatrixState::Partial => "partial",
            MatrixState::Completed => "completed",
        }
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    #[getter]
    fn observed_count(&self) -> usize {
        self.inner.observed_count()
    }

    /// Entries as a list of rows; unobserved entries are zero.
    fn values(&self) -> Vec<Vec<Complex64>> {
        to_rows(self.inner.values())
    }

    /// Observed entries as column-major linear indices, or None when complete.
    fn mask(&self) -> Option<Vec<usize>> {
        self.inner.mask().map(|m| m.observed().to_vec())
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.inner.shape();
        format!("PulseData(pair={:?}, shape=({r}, {c}), state={})", self.inner.pair(), self.state())
    }
}

/// A configuration prepared for repeated trials.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    inner: harness::Experiment,
}

fn unwrap_all(matrices: Vec<PyPulseData>) -> Vec<PulseDataMatrix> {
    matrices.into_iter().map(|m| m.inner).collect()
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PyExperiment {
            inner: harness::Experiment::new(&config.inner).map_err(to_py_err)?,
        })
    }

    fn clean(&self) -> Vec<PyPulseData> {
        self.inner.clean().iter().map(|m| PyPulseData { inner: m.clone() }).collect()
    }

    fn trial_seed(&self, trial: u64) -> u64 {
        self.inner.trial_seed(trial)
    }

    /// Noisy sub-sampled matrices of one trial.
    fn observe(&self, py: Python<'_>, snr_db: f64, rate: f64, trial: u64) -> PyResult<Vec<PyPulseData>> {
        let out = py.allow_threads(|| self.inner.observe(snr_db, rate, trial)).map_err(to_py_err)?;
        Ok(out.into_iter().map(|inner| PyPulseData { inner }).collect())
    }

    /// SVT on every pair. Returns (completed matrices, per-pair diagnostics).
    fn complete(&self, py: Python<'_>, observed: Vec<PyPulseData>) -> PyResult<(Vec<PyPulseData>, PyObject)> {
        let observed = unwrap_all(observed);
        let done = py.allow_threads(|| self.inner.complete(&observed)).map_err(to_py_err)?;
        let diag = to_dict(py, &done.recovery)?;
        Ok((done.matrices.into_iter().map(|inner| PyPulseData { inner }).collect(), diag))
    }

    fn localize_ml(&self, matrices: Vec<PyPulseData>) -> PyResult<Vec<(f64, f64)>> {
        let m = unwrap_all(matrices);
        let p = self.inner.localize_ml(&m).map_err(to_py_err)?;
        Ok(p.into_iter().map(|v| (v.x, v.y)).collect())
    }

    fn localize_geometric(&self, matrices: Vec<PyPulseData>) -> PyResult<Vec<(f64, f64)>> {
        let m = unwrap_all(matrices);
        let p = self.inner.localize_geometric(&m).map_err(to_py_err)?;
        Ok(p.into_iter().map(|v| (v.x, v.y)).collect())
    }

    /// Velocity and fitted reflectivity for each given position.
    fn velocities(
        &self,
        matrices: Vec<PyPulseData>,
        positions: Vec<(f64, f64)>,
    ) -> PyResult<Vec<((f64, f64), Complex64)>> {
        let m = unwrap_all(matrices);
        let p: Vec<wsmimo::Vec2> = positions.into_iter().map(|(x, y)| wsmimo::Vec2::new(x, y)).collect();
        let (v, b) = self.inner.estimate_velocities(&m, &p).map_err(to_py_err)?;
        Ok(v.into_iter().zip(b).map(|(v, b)| ((v.x, v.y), b)).collect())
    }

    /// Full pipeline for one trial, as a dict.
    fn run(&self, py: Python<'_>, snr_db: f64, rate: f64, trial: u64) -> PyResult<PyObject> {
        let report = py.allow_threads(|| self.inner.run(snr_db, rate, trial)).map_err(to_py_err)?;
        to_dict(py, &report)
    }

    fn crlb(&self, py: Python<'_>, snr_db: f64) -> PyResult<PyObject> {
        let r = self.inner.crlb(snr_db).map_err(to_py_err)?;
        to_dict(py, &r)
    }

    /// Ambiguity surface over the position plane around the first target.
    #[pyo3(signature = (rate = 1.0, step = 2.0))]
    fn ambiguity(&self, py: Python<'_>, rate: f64, step: f64) -> PyResult<PyObject> {
        let cfg = self.inner.config();
        let spec = cfg.position_grid();
        let x = Axis::span(spec.x[0], spec.x[1], step).map_err(to_py_err)?;
        let y = Axis::span(spec.y[0], spec.y[1], step).map_err(to_py_err)?;
        let grid = AfGrid {
            plane: AfPlane::Position,
            x,
            y,
        };
        let reference = cfg.scene.targets[0];
        let s = py
            .allow_threads(|| ambiguity(&reference, &grid, self.inner.sensor(), self.inner.codes(), rate, cfg.master_seed))
            .map_err(to_py_err)?;
        let out = pyo3::types::PyDict::new_bound(py);
        out.set_item("x", (0..x.count).map(|i| x.value(i)).collect::<Vec<_>>())?;
        out.set_item("y", (0..y.count).map(|i| y.value(i)).collect::<Vec<_>>())?;
        let rows: Vec<Vec<f64>> = (0..x.count).map(|i| (0..y.count).map(|j| s.grid.value_at(i, j)).collect()).collect();
        out.set_item("values", rows)?;
        out.set_item("half_power_area", s.half_power_area())?;
        out.set_item("max_sidelobe", s.max_sidelobe())?;
        let peak = s.grid.argmax().map(|c| s.grid.point(c)).map(|p| (p.x, p.y));
        out.set_item("peak", peak)?;
        Ok(out.into_any().unbind())
    }
}

/// Complete a matrix from the entries at `observed` (column-major linear indices).
#[pyfunction]
#[pyo3(signature = (values, observed, noise_variance = None, max_iters = 500, tol = 1e-4))]
fn svt(
    py: Python<'_>,
    values: Vec<Vec<Complex64>>,
    observed: Vec<usize>,
    noise_variance: Option<f64>,
    max_iters: usize,
    tol: f64,
) -> PyResult<(Vec<Vec<Complex64>>, PyObject)> {
    let m = from_rows(&values)?;
    let mask = SampleMask::new(m.nrows(), m.ncols(), observed).map_err(to_py_err)?;
    let x = PulseDataMatrix::partial((0, 0), m, mask).map_err(to_py_err)?;
    let mut params = SvtParams::for_matrix(&x);
    params.max_iters = max_iters;
    params.tol = tol;
    if let Some(v) = noise_variance.filter(|v| *v > 0.0) {
        params = params.with_noise_delta(noise_delta(x.observed_count(), v));
    }
    let out = py.allow_threads(|| svt_complete(&x, &params)).map_err(to_py_err)?;
    let info = pyo3::types::PyDict::new_bound(py);
    info.set_item("iterations", out.iterations)?;
    info.set_item("rank", out.rank)?;
    info.set_item("residual", out.residual)?;
    info.set_item("converged", out.converged)?;
    Ok((to_rows(&out.matrix), info.into_any().unbind()))
}

#[pyfunction]
fn relative_recovery_error(reference: Vec<Vec<Complex64>>, estimate: Vec<Vec<Complex64>>) -> PyResult<f64> {
    relative_error(&from_rows(&reference)?, &from_rows(&estimate)?).map_err(to_py_err)
}

#[pyfunction]
fn run_pipeline(py: Python<'_>, config: &PyConfig, snr_db: f64, rate: f64, trial: u64) -> PyResult<PyObject> {
    let r = py
        .allow_threads(|| harness::run_pipeline(&config.inner, snr_db, rate, trial))
        .map_err(to_py_err)?;
    to_dict(py, &r)
}

/// Monte Carlo sweep; returns {"cells": [...], "trials": [...]}.
#[pyfunction]
fn sweep(py: Python<'_>, config: &PyConfig) -> PyResult<PyObject> {
    let r = py.allow_threads(|| harness::sweep(&config.inner)).map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (n_tx, length, subpulse = 1e-7))]
fn hadamard(n_tx: usize, length: usize, subpulse: f64) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(hadamard_codes(n_tx, length, subpulse).map_err(to_py_err)?.codes().to_vec())
}

#[pyfunction]
fn rms_bandwidth(code: Vec<Complex64>, sample_rate: f64) -> PyResult<f64> {
    effective_bandwidth(&code, sample_rate).map_err(to_py_err)
}

#[pymodule]
fn wsmimo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPulseData>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(svt, m)?)?;
    m.add_function(wrap_pyfunction!(relative_recovery_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(rms_bandwidth, m)?)?;
    Ok(())
}
