//! Python bindings: traces, labeling, training and simulation.

use std::path::PathBuf;

use dlmac_core::dataset::{build_dataset, label_at as core_label_at};
use dlmac_core::experiment::{train_policy, TrainPlan};
use dlmac_core::mac::PolicyKind;
use dlmac_core::nn::{load_model, save_model, InferenceNet, PolicyModel};
use dlmac_core::phy::{LinkBudget, McsTable};
use dlmac_core::sim::{compare_policies, run_simulation, SimConfig, SimEnv, SimResult};
use dlmac_core::trace::{generate_synthetic, load_raw, preprocess, Interferer, Origin, RawFormat, SyntheticScenario};
use dlmac_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::TraceTooShort { .. } | Error::Format(_) => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn budget(payload: u32, slot_us: f64) -> LinkBudget {
    LinkBudget {
        payload_bytes: payload,
        slot_us,
        ..LinkBudget::default()
    }
}

#[pyclass(name = "SlotTrace", frozen, from_py_object)]
#[derive(Clone)]
struct PySlotTrace {
    inner: dlmac_core::trace::SlotTrace,
}

#[pymethods]
impl PySlotTrace {
    #[new]
    #[pyo3(signature = (rssi, slot_us = 9.0))]
    fn new(rssi: Vec<f32>, slot_us: f64) -> PyResult<Self> {
        let inner = dlmac_core::trace::SlotTrace::new(rssi, slot_us, None, Origin::Derived("python".into()))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, slot_us = 9.0))]
    fn load(path: PathBuf, slot_us: f64) -> PyResult<Self> {
        let inner = dlmac_core::trace::SlotTrace::load(&path, slot_us).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// One interferer over a constant noise floor.
    #[staticmethod]
    #[pyo3(signature = (slots, period = 400, duty = 0.5, power_dbm = -60.0, noise_dbm = -95.0, jitter = 0, seed = 0, slot_us = 9.0))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        slots: usize,
        period: usize,
        duty: f64,
        power_dbm: f64,
        noise_dbm: f64,
        jitter: usize,
        seed: u64,
        slot_us: f64,
    ) -> PyResult<Self> {
        let scenario = SyntheticScenario {
            noise_floor_dbm: noise_dbm,
            interferers: vec![Interferer {
                period_slots: period,
                duty_cycle: duty,
                power_dbm,
                jitter_slots: jitter,
            }],
            duration_slots: slots,
            seed,
        };
        Ok(Self {
            inner: generate_synthetic(&scenario, slot_us).map_err(to_py)?,
        })
    }

    /// One channel of a raw capture in the default layout.
    #[staticmethod]
    #[pyo3(signature = (path, channel, slot_us = 9.0))]
    fn from_raw(path: PathBuf, channel: u8, slot_us: f64) -> PyResult<Self> {
        let raw = load_raw(&path, &RawFormat::default()).map_err(to_py)?;
        let origin = Origin::File(path.display().to_string());
        Ok(Self {
            inner: preprocess(&raw, channel, slot_us, origin).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn rssi(&self) -> Vec<f32> {
        self.inner.rssi().to_vec()
    }

    #[getter]
    fn slot_us(&self) -> f64 {
        self.inner.slot_us
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        if start >= end || end > self.inner.len() {
            return Err(PyValueError::new_err(format!("bad range {start}..{end}")));
        }
        Ok(Self {
            inner: self.inner.slice(start..end, "python"),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SlotTrace(len={}, slot_us={}, origin={})", self.inner.len(), self.inner.slot_us, self.inner.origin)
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: PolicyModel<f32>,
    net: InferenceNet,
}

impl PyModel {
    fn wrap(inner: PolicyModel<f32>) -> Self {
        let net = InferenceNet::new(&inner);
        Self { inner, net }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self::wrap(load_model(&path).map_err(to_py)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.spec.input_dim
    }

    /// Label (-1 idle, else MCS) predicted for a raw dBm window.
    fn predict(&self, window: Vec<f32>) -> PyResult<i8> {
        let class = self.net.predict_class(&window).map_err(to_py)?;
        Ok(dlmac_core::dataset::class_to_label(class))
    }

    fn logits(&self, window: Vec<f32>) -> PyResult<Vec<f32>> {
        self.net.logits(&window).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (trace, t, mtxop = None, payload = 1500))]
fn label_at(trace: &PySlotTrace, t: usize, mtxop: Option<usize>, payload: u32) -> PyResult<i8> {
    let table = McsTable::default();
    let b = budget(payload, trace.inner.slot_us);
    let m = mtxop.unwrap_or_else(|| b.mtxop_slots(&table));
    core_label_at(&trace.inner, t, &b, &table, m).map_err(to_py)
}

/// `(slots, labels)` of the example set built from `trace`.
#[pyfunction]
#[pyo3(signature = (trace, stride = 8, mtxop = None, payload = 1500))]
fn labels(trace: &PySlotTrace, stride: usize, mtxop: Option<usize>, payload: u32) -> PyResult<(Vec<usize>, Vec<i8>)> {
    let table = McsTable::default();
    let b = budget(payload, trace.inner.slot_us);
    let m = mtxop.unwrap_or_else(|| b.mtxop_slots(&table));
    let ds = build_dataset(&trace.inner, &b, &table, m, stride).map_err(to_py)?;
    Ok((ds.iter().map(|e| e.t).collect(), ds.labels().to_vec()))
}

/// Trains on the concatenated examples of `traces`; returns the model and
/// the per-epoch history as dicts.
#[pyfunction]
#[pyo3(signature = (traces, epochs = 30, seed = 0, stride = 8, width_divisor = 1, per_epoch = 16384, batch_size = 256, lr = 1e-3))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    traces: Vec<PySlotTrace>,
    epochs: usize,
    seed: u64,
    stride: usize,
    width_divisor: usize,
    per_epoch: usize,
    batch_size: usize,
    lr: f64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let plan = TrainPlan {
        stride,
        width_divisor,
        model_seed: seed,
        epochs,
        batch_size,
        learning_rate: lr,
        seed,
        max_examples_per_epoch: (per_epoch > 0).then_some(per_epoch),
        ..TrainPlan::default()
    };
    let traces: Vec<_> = traces.into_iter().map(|t| t.inner).collect();
    let trained = train_policy(&traces, &plan, &McsTable::default()).map_err(to_py)?;
    let mut history = Vec::with_capacity(trained.history.epochs.len());
    for r in &trained.history.epochs {
        let d = PyDict::new(py);
        d.set_item("epoch", r.epoch)?;
        d.set_item("train_loss", r.train_loss)?;
        d.set_item("val_loss", r.val_loss)?;
        d.set_item("val_acc", r.val_acc)?;
        history.push(d);
    }
    Ok((PyModel::wrap(trained.model), history))
}

fn sim_config(policy: PolicyKind, seed: u64, lambda_: f64, window_s: f64) -> PyResult<SimConfig> {
    let cfg = SimConfig {
        policy,
        seed,
        lambda_arrivals: lambda_,
        measure_window_s: window_s,
        record_events: false,
        ..SimConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn result_dict<'py>(py: Python<'py>, r: &SimResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("policy", r.policy.to_string())?;
    d.set_item("seed", r.seed)?;
    d.set_item("mean_throughput", r.mean_throughput)?;
    d.set_item("throughput_series", r.throughput_series.clone())?;
    d.set_item("offered", r.offered)?;
    d.set_item("delivered", r.delivered)?;
    d.set_item("failed", r.failed)?;
    d.set_item("delivered_bits", r.delivered_bits)?;
    d.set_item("mcs_usage", r.mcs_usage.to_vec())?;
    Ok(d)
}

fn parse_policy(name: &str) -> PyResult<PolicyKind> {
    name.parse().map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (trace, policy, model = None, seed = 0, lambda_ = 0.18, window_s = 2.0))]
fn simulate<'py>(
    py: Python<'py>,
    trace: &PySlotTrace,
    policy: &str,
    model: Option<&PyModel>,
    seed: u64,
    lambda_: f64,
    window_s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = sim_config(parse_policy(policy)?, seed, lambda_, window_s)?;
    let env = SimEnv::new(trace.inner.clone(), McsTable::default(), model.map(|m| &m.inner));
    let r = run_simulation(&env, &cfg).map_err(to_py)?;
    result_dict(py, &r)
}

/// One dict per policy with mean, std and per-run means.
#[pyfunction]
#[pyo3(signature = (trace, policies = None, model = None, runs = 10, seed = 0, lambda_ = 0.18, window_s = 2.0))]
#[allow(clippy::too_many_arguments)]
fn compare<'py>(
    py: Python<'py>,
    trace: &PySlotTrace,
    policies: Option<Vec<String>>,
    model: Option<&PyModel>,
    runs: usize,
    seed: u64,
    lambda_: f64,
    window_s: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kinds = match policies {
        Some(names) => names.iter().map(|n| parse_policy(n)).collect::<PyResult<Vec<_>>>()?,
        None => PolicyKind::ALL.to_vec(),
    };
    let cfg = sim_config(PolicyKind::Gopt, seed, lambda_, window_s)?;
    let env = SimEnv::new(trace.inner.clone(), McsTable::default(), model.map(|m| &m.inner));
    let cmp = compare_policies(&env, &kinds, &cfg, runs).map_err(to_py)?;
    cmp.rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("policy", r.policy.to_string())?;
            d.set_item("mean", r.stats.mean)?;
            d.set_item("std", r.stats.std)?;
            d.set_item("run_means", r.stats.run_means.clone())?;
            d.set_item("series", r.mean_series.clone())?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn policies() -> Vec<String> {
    PolicyKind::ALL.iter().map(|p| p.to_string()).collect()
}

#[pymodule]
fn dlmac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySlotTrace>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(label_at, m)?)?;
    m.add_function(wrap_pyfunction!(labels, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(policies, m)?)?;
    Ok(())
}
