//! Python bindings: residual reduction, experiment sweeps, result tables
//! and scripted replays.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use asyncdetect::harness::{self, Axis, ExperimentConfig, ReplayConfig, Stat};
use asyncdetect::{Norm, ResidualSpec};

fn py_err(e: asyncdetect::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// `σ(locals)` for the given norm (`"max"`, `"l2"`, `"l1"`, `"l3.5"`, ...).
#[pyfunction]
#[pyo3(signature = (locals, norm = "l2"))]
fn reduce_residual(locals: Vec<f64>, norm: &str) -> PyResult<f64> {
    let norm: Norm = norm.parse().map_err(py_err)?;
    asyncdetect::reduce_residual(&ResidualSpec::new(norm), &locals).map_err(py_err)
}

/// An experiment configuration parsed from TOML.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    cfg: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(toml: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml(toml).map_err(py_err)?;
        cfg.validate().map_err(py_err)?;
        Ok(Self { cfg })
    }

    /// Number of runs the sweep will execute.
    fn run_count(&self) -> usize {
        self.cfg.points().len() * self.cfg.sweep.seeds.len()
    }

    /// Runs the sweep and returns the reports as CSV text.
    fn run(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.cfg.clone();
        let rows = py.detach(move || harness::run_sweep(&cfg).map(|r| r.rows)).map_err(py_err)?;
        harness::rows_to_csv(&rows).map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.cfg.to_toml().map_err(py_err)
    }
}

/// Summary table of a reports CSV, as aligned text or CSV.
#[pyfunction]
#[pyo3(signature = (reports, group_by = vec!["protocol".to_string(), "p".to_string()], stats = vec!["min".to_string(), "max".to_string()], csv = false))]
fn table(reports: &str, group_by: Vec<String>, stats: Vec<String>, csv: bool) -> PyResult<String> {
    let rows = harness::rows_from_csv(reports).map_err(py_err)?;
    let axes = group_by.iter().map(|a| a.parse()).collect::<asyncdetect::Result<Vec<Axis>>>().map_err(py_err)?;
    let stats = stats.iter().map(|s| s.parse()).collect::<asyncdetect::Result<Vec<Stat>>>().map_err(py_err)?;
    let t = harness::emit_table(&rows, &axes, &stats).map_err(py_err)?;
    if csv {
        t.to_csv().map_err(py_err)
    } else {
        Ok(t.to_aligned())
    }
}

/// Replays a scripted execution. Returns the iteration counters, the
/// global vector each process assembled in the first snapshot (`None`
/// where incomplete) and the protocol trace.
#[pyfunction]
fn replay<'py>(py: Python<'py>, toml: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ReplayConfig::from_toml(toml).map_err(py_err)?;
    let scenario = cfg.scenario().map_err(py_err)?;
    let rep = cfg.replay().map_err(py_err)?;
    let cuts = rep.cuts(&scenario.problem, 0).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("iterations", rep.iterations)?;
    out.set_item("cuts", cuts)?;
    out.set_item("terminated", rep.terminated)?;
    out.set_item("trace", rep.trace.iter().map(|t| t.to_string()).collect::<Vec<_>>())?;
    Ok(out)
}

#[pymodule]
fn pyasyncdetect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(reduce_residual, m)?)?;
    m.add_function(wrap_pyfunction!(table, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_class::<PyExperiment>()?;
    m.add("WORKERS_ENV", harness::WORKERS_ENV)?;
    Ok(())
}
