//! Python bindings. Experiment results come back as JSON strings; decode
//! them with `json.loads`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use skyshield_core::energy::{self, AircraftParams};
use skyshield_core::geometry::Point;
use skyshield_core::harness::{self, ExperimentConfig, HarnessError};
use skyshield_core::routing::{plan_route as core_plan_route, CostMode, Stop};
use skyshield_core::world::CustomerId;
use std::path::PathBuf;

fn to_py(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Io { .. } | HarnessError::Output { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(toml: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = match toml {
        Some(t) => ExperimentConfig::from_toml(t, "<python>").map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Hover power in watts at the default rotorcraft parameters.
#[pyfunction]
fn hover_power() -> f64 {
    energy::hover_power(&AircraftParams::default())
}

/// Forward-flight power in watts at `speed` m/s.
#[pyfunction]
fn propulsion_power(speed: f64) -> PyResult<f64> {
    energy::propulsion_power(speed, &AircraftParams::default()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Mean and population standard deviation.
#[pyfunction]
fn summarize(values: Vec<f64>) -> PyResult<(f64, f64)> {
    harness::summarize(&values).map_err(to_py)
}

/// Cheapest visiting order. Returns (indices into `points`, length).
#[pyfunction]
#[pyo3(signature = (start, points, home=None))]
fn plan_route(start: (f64, f64), points: Vec<(f64, f64)>, home: Option<(f64, f64)>) -> PyResult<(Vec<u32>, f64)> {
    let p = |(x, y): (f64, f64)| Point { x, y };
    let stops: Vec<Stop> = points
        .iter()
        .enumerate()
        .map(|(i, &q)| Stop {
            id: CustomerId(i as u32),
            position: p(q),
        })
        .collect();
    let r = core_plan_route(p(start), &stops, home.map(p), CostMode::Distance, 8)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((r.stops.iter().map(|c| c.0).collect(), r.total_cost))
}

/// Run an experiment described by TOML text (defaults when omitted) and
/// return the summary as JSON. Writes files only when `output_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_toml=None, output_dir=None))]
fn run_experiment(py: Python<'_>, config_toml: Option<&str>, output_dir: Option<PathBuf>) -> PyResult<String> {
    let write = output_dir.is_some();
    let cfg = config(config_toml, output_dir)?;
    let bundle = py
        .detach(|| {
            if write {
                harness::run_experiment(&cfg)
            } else {
                harness::run_episodes(&cfg)
            }
        })
        .map_err(to_py)?;
    json(&bundle.summary)
}

/// Paired planner-only / safeguarded comparison; returns the comparison JSON.
#[pyfunction]
#[pyo3(signature = (output_dir, config_toml=None))]
fn compare(py: Python<'_>, output_dir: PathBuf, config_toml: Option<&str>) -> PyResult<String> {
    let cfg = config(config_toml, Some(output_dir))?;
    let cmp = py.detach(|| harness::compare(&cfg)).map_err(to_py)?;
    json(&cmp)
}

/// The default experiment configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_toml()
}

#[pymodule]
fn skyshield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hover_power, m)?)?;
    m.add_function(wrap_pyfunction!(propulsion_power, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(plan_route, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
