//! Python bindings: `import fedelim`.

use std::path::PathBuf;

use fedelim::config::{canonical_toml, load_experiment, parse_experiment};
use fedelim::fedcore::{self, ConfParams, SmoothParams};
use fedelim::harness::{self, ExperimentConfig, RunMetrics, Variant};
use fedelim::objectives::{BaseObjective, Certificate, ObjectiveKind, ObjectiveSuite};
use fedelim::partition::{self, BoxDomain, NodeId, PartitionSpec};
use fedelim::pfpne::canonical_pull;
use fedelim::report::write_outputs;
use fedelim::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn domain(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<BoxDomain> {
    BoxDomain::new(lower, upper).map_err(py_err)
}

fn spec(arity: u32) -> PyResult<PartitionSpec> {
    PartitionSpec::new(arity).map_err(py_err)
}

/// `c·sqrt(log(c1·T/δ)/n)`.
#[pyfunction]
#[pyo3(signature = (pulls, c=0.1, c1=1.0, delta=0.1, horizon=5000))]
fn confidence_bound(pulls: u64, c: f64, c1: f64, delta: f64, horizon: u64) -> PyResult<f64> {
    let conf = ConfParams::new(c, c1, delta, horizon).map_err(py_err)?;
    fedcore::confidence_bound(pulls, &conf).map_err(py_err)
}

/// Per-node pull threshold at depth `h`.
#[pyfunction]
#[pyo3(signature = (h, c=0.1, c1=1.0, delta=0.1, horizon=5000, nu1=1.0, rho=0.5))]
fn tau(h: u32, c: f64, c1: f64, delta: f64, horizon: u64, nu1: f64, rho: f64) -> PyResult<u128> {
    let conf = ConfParams::new(c, c1, delta, horizon).map_err(py_err)?;
    let smooth = SmoothParams::new(nu1, rho, 0.01).map_err(py_err)?;
    Ok(fedcore::tau(h, &conf, &smooth))
}

#[pyfunction]
fn quota(tau_h: u128, clients: usize) -> u128 {
    fedcore::quota(tau_h, clients)
}

/// Smallest depth whose resolution `nu1·rho^h` is at most `delta_gap`.
#[pyfunction]
#[pyo3(signature = (nu1=1.0, rho=0.5, delta_gap=0.01))]
fn transition_depth(nu1: f64, rho: f64, delta_gap: f64) -> PyResult<u32> {
    let smooth = SmoothParams::new(nu1, rho, delta_gap).map_err(py_err)?;
    Ok(fedcore::transition_depth(&smooth))
}

#[pyfunction]
#[pyo3(signature = (depth, index, arity=2))]
fn children(depth: u32, index: u128, arity: u32) -> PyResult<Vec<(u32, u128)>> {
    Ok(partition::children(NodeId::new(depth, index), spec(arity)?).into_iter().map(|n| (n.depth, n.index)).collect())
}

#[pyfunction]
#[pyo3(signature = (depth, index, arity=2))]
fn parent(depth: u32, index: u128, arity: u32) -> PyResult<(u32, u128)> {
    let p = partition::parent(NodeId::new(depth, index), spec(arity)?).map_err(py_err)?;
    Ok((p.depth, p.index))
}

/// `(lower, upper)` of a node's cell.
#[pyfunction]
#[pyo3(signature = (lower, upper, depth, index, arity=2))]
fn cell(lower: Vec<f64>, upper: Vec<f64>, depth: u32, index: u128, arity: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = partition::cell(&domain(lower, upper)?, NodeId::new(depth, index), spec(arity)?);
    Ok((c.lower().to_vec(), c.upper().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (lower, upper, depth, index, arity=2))]
fn representative(lower: Vec<f64>, upper: Vec<f64>, depth: u32, index: u128, arity: u32) -> PyResult<Vec<f64>> {
    Ok(partition::representative(&domain(lower, upper)?, NodeId::new(depth, index), spec(arity)?))
}

#[pyfunction]
#[pyo3(signature = (lower, upper, x, depth, arity=2))]
fn locate(lower: Vec<f64>, upper: Vec<f64>, x: Vec<f64>, depth: u32, arity: u32) -> PyResult<(u32, u128)> {
    let n = partition::locate(&domain(lower, upper)?, &x, depth, spec(arity)?).map_err(py_err)?;
    Ok((n.depth, n.index))
}

fn certificate<'py>(py: Python<'py>, c: &Certificate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("point", c.point.clone())?;
    d.set_item("value", c.value)?;
    d.set_item("method", format!("{:?}", c.method).to_lowercase())?;
    d.set_item("evaluations", c.evaluations)?;
    Ok(d)
}

/// Shifted client objectives over one base function.
#[pyclass(name = "Suite", module = "fedelim", frozen)]
struct PySuite {
    inner: ObjectiveSuite,
}

#[pymethods]
impl PySuite {
    #[new]
    #[pyo3(signature = (objective, clients, shift_std=None, noise=0.0, seed=0))]
    fn new(objective: &str, clients: usize, shift_std: Option<f64>, noise: f64, seed: u64) -> PyResult<Self> {
        let kind: ObjectiveKind = objective.parse().map_err(py_err)?;
        let base = BaseObjective::new(kind).map_err(py_err)?;
        let s = shift_std.unwrap_or(0.05 * base.domain().max_width());
        let inner = ObjectiveSuite::new(base, clients, s, noise, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn clients(&self) -> usize {
        self.inner.clients()
    }

    #[getter]
    fn domain(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.inner.domain();
        (d.lower().to_vec(), d.upper().to_vec())
    }

    #[getter]
    fn shifts(&self) -> Vec<Vec<f64>> {
        self.inner.shifts().to_vec()
    }

    fn eval_local(&self, m: usize, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval_local(m, &x).map_err(py_err)
    }

    fn eval_global(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval_global(&x).map_err(py_err)
    }

    fn local_optimum<'py>(&self, py: Python<'py>, m: usize) -> PyResult<Bound<'py, PyDict>> {
        if m >= self.inner.clients() {
            return Err(PyValueError::new_err(format!("client {m} out of range")));
        }
        certificate(py, self.inner.local_optimum(m))
    }

    fn global_optimum<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        certificate(py, self.inner.global_optimum())
    }

    fn __repr__(&self) -> String {
        format!("Suite({}, clients={})", self.inner.base().kind(), self.inner.clients())
    }
}

fn metrics<'py>(py: Python<'py>, m: &RunMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("variant", m.variant.name())?;
    d.set_item("seed", m.seed)?;
    d.set_item("checkpoints", m.checkpoints.clone())?;
    d.set_item("avg_cum_regret", m.avg_cum_regret.clone())?;
    d.set_item("client_final_regret", m.client_final_regret.clone())?;
    d.set_item("comm_rounds", m.comm_rounds())?;
    d.set_item("scalars", m.cumulative_scalars().last().copied().unwrap_or(0))?;
    d.set_item("transition_t", m.transition_t)?;
    Ok(d)
}

/// An experiment configuration: TOML text (or defaults) plus keyword
/// overrides named like the config file keys.
#[pyclass(name = "Experiment", module = "fedelim", frozen)]
struct PyExperiment {
    inner: ExperimentConfig,
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &Bound<'_, PyAny>) -> PyResult<()> {
    match key {
        "objective" => {
            let kind: ObjectiveKind = v.extract::<String>()?.parse().map_err(py_err)?;
            if kind != cfg.objective {
                cfg.domain = None;
            }
            cfg.objective = kind;
        }
        "clients" => cfg.clients = v.extract()?,
        "horizon" => cfg.horizon = v.extract()?,
        "shift_std" => cfg.shift_std = v.extract()?,
        "noise" => cfg.noise = v.extract()?,
        "nu1" => cfg.nu1 = v.extract()?,
        "rho" => cfg.rho = v.extract()?,
        "c" => cfg.c = v.extract()?,
        "c1" => cfg.c1 = v.extract()?,
        "delta_conf" => cfg.delta_conf = v.extract()?,
        "delta_gap" => cfg.delta_gap = v.extract()?,
        "arity" => cfg.arity = v.extract()?,
        "depth_cap" => cfg.depth_cap = v.extract()?,
        "checkpoint_stride" => cfg.checkpoint_stride = v.extract()?,
        "seeds" => cfg.seeds = v.extract()?,
        "variants" => {
            cfg.variants = v
                .extract::<Vec<String>>()?
                .iter()
                .map(|n| n.parse::<Variant>())
                .collect::<Result<_, _>>()
                .map_err(py_err)?
        }
        _ => return Err(PyValueError::new_err(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

#[pymethods]
impl PyExperiment {
    #[new]
    #[pyo3(signature = (toml=None, **overrides))]
    fn new(toml: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = match toml {
            Some(text) => parse_experiment(text).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                apply(&mut inner, &k.extract::<String>()?, &v)?;
            }
        }
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_experiment(&path).map_err(py_err)? })
    }

    /// Canonical TOML with every default resolved.
    fn to_toml(&self) -> PyResult<String> {
        canonical_toml(&self.inner).map_err(py_err)
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn variants(&self) -> Vec<&'static str> {
        self.inner.variants.iter().map(|v| v.name()).collect()
    }

    fn suite(&self, seed: u64) -> PyResult<PySuite> {
        Ok(PySuite { inner: self.inner.suite(seed).map_err(py_err)? })
    }

    /// One run. With `transcript=True` the result also holds the canonical
    /// protocol transcript and every pull.
    #[pyo3(signature = (variant, seed, transcript=false))]
    fn run<'py>(&self, py: Python<'py>, variant: &str, seed: u64, transcript: bool) -> PyResult<Bound<'py, PyDict>> {
        let v: Variant = variant.parse().map_err(py_err)?;
        let cfg = self.inner.clone();
        let out = py.detach(move || harness::run(&cfg, v, seed)).map_err(py_err)?;
        let d = metrics(py, &out.metrics)?;
        d.set_item("transition_depth", out.protocol.transition_depth)?;
        if transcript {
            d.set_item("transcript", out.transcript.canonical())?;
            let pulls: Vec<Vec<String>> = out.pulls.iter().map(|r| r.iter().map(canonical_pull).collect()).collect();
            d.set_item("pulls", pulls)?;
        }
        Ok(d)
    }

    /// All variants over all seeds; returns per-run metrics and per-variant
    /// aggregates. Writes regret.csv, comm.csv and summary.json if `out` is
    /// given.
    #[pyo3(signature = (out=None))]
    fn run_many<'py>(&self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.inner.clone();
        let results = py.detach(move || harness::run_many(&cfg)).map_err(py_err)?;
        if let Some(dir) = out {
            write_outputs(&dir, &results).map_err(py_err)?;
        }
        let runs = results.runs.iter().map(|m| metrics(py, m)).collect::<PyResult<Vec<_>>>()?;
        let aggregates = PyDict::new(py);
        for a in &results.aggregates {
            let d = PyDict::new(py);
            d.set_item("runs", a.runs)?;
            d.set_item("checkpoints", a.checkpoints.clone())?;
            d.set_item("mean", a.mean.clone())?;
            d.set_item("std", a.std.clone())?;
            d.set_item("final_mean", a.final_mean)?;
            d.set_item("final_std", a.final_std)?;
            d.set_item("comm_rounds_mean", a.comm_rounds_mean)?;
            d.set_item("transition_t_mean", a.transition_t_mean)?;
            aggregates.set_item(a.variant.name(), d)?;
        }
        let d = PyDict::new(py);
        d.set_item("runs", runs)?;
        d.set_item("aggregates", aggregates)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Experiment({}, clients={}, horizon={}, seeds={})",
            self.inner.objective,
            self.inner.clients,
            self.inner.horizon,
            self.inner.seeds.len()
        )
    }
}

#[pymodule]
#[pyo3(name = "fedelim")]
fn fedelim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySuite>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(confidence_bound, m)?)?;
    m.add_function(wrap_pyfunction!(tau, m)?)?;
    m.add_function(wrap_pyfunction!(quota, m)?)?;
    m.add_function(wrap_pyfunction!(transition_depth, m)?)?;
    m.add_function(wrap_pyfunction!(children, m)?)?;
    m.add_function(wrap_pyfunction!(parent, m)?)?;
    m.add_function(wrap_pyfunction!(cell, m)?)?;
    m.add_function(wrap_pyfunction!(representative, m)?)?;
    m.add_function(wrap_pyfunction!(locate, m)?)?;
    m.add("OBJECTIVES", ObjectiveKind::ALL.iter().map(|k| k.to_string()).collect::<Vec<_>>())?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    Ok(())
}
