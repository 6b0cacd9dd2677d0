//! Python bindings. Structured values cross the boundary as JSON strings or
//! plain tuples; records and tables come back in the CLI's CSV/JSON layouts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use qfc_core::fuzzy::{self, canonical_json};
use qfc_core::harness::{self, HarnessError, KbSet, LabConfig, ScenarioConfig, System};
use qfc_core::pid::{Channel, GainBounds, GainTriple};
use qfc_core::plant::LINKS;
use qfc_core::qfi::{self, CorrelationSpec, CorrelationType, GainHistory};
use qfc_core::thermo::{self, ProbabilityDistribution};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Io { .. } | HarnessError::MissingKb(_) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn triple(g: GainTriple) -> (f64, f64, f64) {
    (g.kp, g.kd, g.ki)
}

fn lab_config(config_json: Option<&str>) -> PyResult<LabConfig> {
    config_json.map_or_else(|| Ok(LabConfig::default()), |s| LabConfig::from_json(s).map_err(harness_err))
}

/// Fuzzy knowledge base mapping (error, error rate) to PID gains.
#[pyclass(module = "qfc_lab", from_py_object)]
#[derive(Clone)]
struct KnowledgeBase {
    inner: fuzzy::KnowledgeBase,
}

#[pymethods]
impl KnowledgeBase {
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        fuzzy::load_kb(document).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::read_kb(&path).map(|inner| Self { inner }).map_err(harness_err)
    }

    fn to_json(&self) -> String {
        fuzzy::save_kb(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::write_file(&path, &self.to_json()).map_err(harness_err)
    }

    /// Inferred `(kp, kd, ki)`.
    fn infer(&self, error: f64, error_rate: f64) -> PyResult<(f64, f64, f64)> {
        self.inner.infer(&[error, error_rate]).map(|i| triple(i.gains)).map_err(value_err)
    }

    #[getter]
    fn rule_count(&self) -> usize {
        self.inner.rules.len()
    }

    /// CSV grid of one channel (`kp`, `kd` or `ki`) over the input universes.
    #[pyo3(signature = (channel, resolution=50))]
    fn surface(&self, channel: &str, resolution: usize) -> PyResult<String> {
        let channel = Channel::parse(channel).ok_or_else(|| value_err(format!("unknown channel '{channel}'")))?;
        harness::emit_fuzzy_surface(&self.inner, channel, resolution).map_err(harness_err)
    }

    fn __repr__(&self) -> String {
        format!("KnowledgeBase(rules={})", self.inner.rules.len())
    }
}

/// Fused gains from per-link gain histories (oldest first, newest last).
#[pyfunction]
#[pyo3(signature = (histories, correlation="temporal", scaling=(1.0, 1.0, 1.0), lag=1))]
fn qfi_step(
    histories: Vec<Vec<(f64, f64, f64)>>,
    correlation: &str,
    scaling: (f64, f64, f64),
    lag: usize,
) -> PyResult<(f64, f64, f64)> {
    if histories.len() != LINKS {
        return Err(value_err(format!("expected {LINKS} histories, got {}", histories.len())));
    }
    let kind = CorrelationType::parse(correlation).ok_or_else(|| value_err(format!("unknown correlation type '{correlation}'")))?;
    let spec = CorrelationSpec { kind, lag, scaling: [scaling.0, scaling.1, scaling.2] };
    let hist: [GainHistory; LINKS] = std::array::from_fn(|i| {
        let mut h = GainHistory::for_lag(lag);
        for &(kp, kd, ki) in &histories[i] {
            h.push(GainTriple::new(kp, kd, ki));
        }
        h
    });
    qfi::qfi_step(&spec, &hist, &GainBounds::default()).map(|o| triple(o.gains)).map_err(value_err)
}

fn distribution(weights: Vec<f64>) -> PyResult<ProbabilityDistribution> {
    ProbabilityDistribution::normalized(weights).map_err(value_err)
}

/// KL divergence of two weight vectors (normalized first), in nats.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    thermo::kl_divergence(&distribution(p)?, &distribution(q)?).map_err(value_err)
}

#[pyfunction]
fn renyi_divergence(p: Vec<f64>, q: Vec<f64>, alpha: f64) -> PyResult<f64> {
    thermo::renyi_divergence(&distribution(p)?, &distribution(q)?, alpha).map_err(value_err)
}

#[pyfunction]
fn dissipation_work(forward: Vec<f64>, backward: Vec<f64>, kt: f64) -> PyResult<f64> {
    thermo::dissipation_work(&distribution(forward)?, &distribution(backward)?, kt).map_err(value_err)
}

/// Default lab settings as JSON.
#[pyfunction]
fn default_lab_config() -> String {
    canonical_json(&LabConfig::default())
}

/// Trains every knowledge base and writes them to `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, config_json=None))]
fn train(py: Python<'_>, out_dir: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<Vec<PathBuf>> {
    let lab = lab_config(config_json)?;
    py.detach(|| {
        let training = harness::train_kbs(&lab, seed)?;
        training.save(&out_dir, &lab, seed)?;
        Ok(KbSet::paths(&out_dir, harness::Topology::SeparatedFc)
            .into_iter()
            .chain(KbSet::paths(&out_dir, harness::Topology::SingleFc))
            .collect())
    })
    .map_err(harness_err)
}

/// Runs one scenario document; returns the record as CSV or JSON.
#[pyfunction]
#[pyo3(signature = (scenario_json, format="csv"))]
fn run_scenario(py: Python<'_>, scenario_json: &str, format: &str) -> PyResult<String> {
    let config = ScenarioConfig::from_json(scenario_json).map_err(harness_err)?;
    let record = py.detach(|| harness::run_scenario(&config)).map_err(harness_err)?;
    match format {
        "csv" => Ok(record.to_csv()),
        "json" => Ok(record.to_json()),
        other => Err(value_err(format!("unknown format '{other}'"))),
    }
}

/// Comparison table over systems and catalog scenarios using the knowledge
/// bases in `kb_dir`.
#[pyfunction]
#[pyo3(signature = (kb_dir, systems, scenarios=None, seed=0, config_json=None, format="csv"))]
fn compare(
    py: Python<'_>,
    kb_dir: PathBuf,
    systems: Vec<String>,
    scenarios: Option<Vec<String>>,
    seed: u64,
    config_json: Option<&str>,
    format: &str,
) -> PyResult<String> {
    let lab = lab_config(config_json)?;
    let systems = systems.iter().map(|s| System::parse(s)).collect::<Result<Vec<_>, _>>().map_err(harness_err)?;
    let scenarios = match scenarios {
        None => lab.catalog(),
        Some(names) => names.iter().map(|s| lab.scenario(s)).collect::<Result<Vec<_>, _>>().map_err(harness_err)?,
    };
    let table = py
        .detach(|| {
            let kbs = KbSet::load(&kb_dir)?;
            harness::run_comparison(&lab, &systems, &scenarios, &kbs, seed)
        })
        .map_err(harness_err)?;
    match format {
        "csv" => Ok(table.to_csv()),
        "json" => Ok(table.to_json()),
        other => Err(value_err(format!("unknown format '{other}'"))),
    }
}

#[pymodule]
pub fn qfc_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KnowledgeBase>()?;
    m.add_function(wrap_pyfunction!(qfi_step, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(renyi_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(dissipation_work, m)?)?;
    m.add_function(wrap_pyfunction!(default_lab_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
