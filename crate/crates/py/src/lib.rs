//! Python bindings: the LM-head model, the optimizer family, embedding
//! metrics, significance testing and whole training runs.
//!
//! Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use calab::corpus::ZipfCorpus;
use calab::harness::{run_seed, Dataset, ExperimentConfig, HarnessError};
use calab::linalg::Matrix;
use calab::metrics::{self, MetricsReport};
use calab::model::{self, Gradients, ModelConfig, ModelParams};
use calab::optim::{ModelOptimizer, OptimConfig, OptimizerKind};
use calab::rng::SplitMix64;
use calab::stats::{self, Direction};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(value_err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn parse_direction(s: &str) -> PyResult<Direction> {
    match s {
        "lower" => Ok(Direction::LowerBetter),
        "higher" => Ok(Direction::HigherBetter),
        _ => Err(PyValueError::new_err(format!("direction must be 'lower' or 'higher', got {s:?}"))),
    }
}

/// Embedding table, optional hidden layer and LM head.
#[pyclass(module = "calab_py")]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (vocab_size, hidden_dim, hidden_layer=true, tie_weights=true, head_only_grad=false, init_std=0.02, seed=0))]
    fn new(
        vocab_size: usize,
        hidden_dim: usize,
        hidden_layer: bool,
        tie_weights: bool,
        head_only_grad: bool,
        init_std: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig { vocab_size, hidden_dim, hidden_layer, tie_weights, head_only_grad, init_std };
        let params = ModelParams::init(&cfg, &mut SplitMix64::new(seed)).map_err(value_err)?;
        Ok(Self { params })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    #[getter]
    fn embeddings(&self) -> Vec<Vec<f64>> {
        to_rows(&self.params.embeddings)
    }

    #[setter]
    fn set_embeddings(&mut self, rows: Vec<Vec<f64>>) -> PyResult<()> {
        let m = to_matrix(rows)?;
        if m.shape() != self.params.embeddings.shape() {
            return Err(PyValueError::new_err(format!("expected shape {:?}", self.params.embeddings.shape())));
        }
        self.params.embeddings = m;
        Ok(())
    }

    /// The table that produces the logits.
    fn output_table(&self) -> Vec<Vec<f64>> {
        to_rows(self.params.output_table())
    }

    fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Loss, probabilities and hidden state for one example.
    fn forward<'py>(&self, py: Python<'py>, context: Vec<usize>, target: usize) -> PyResult<Bound<'py, PyDict>> {
        let t = model::forward(&self.params, &context, target).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("loss", t.loss)?;
        d.set_item("probs", t.probs)?;
        d.set_item("logits", t.logits)?;
        d.set_item("h", t.h)?;
        Ok(d)
    }

    /// Gradients of the loss of one example, keyed by tensor name.
    fn backward<'py>(&self, py: Python<'py>, context: Vec<usize>, target: usize) -> PyResult<Bound<'py, PyDict>> {
        let t = model::forward(&self.params, &context, target).map_err(value_err)?;
        let g = model::backward(&self.params, &t).map_err(value_err)?;
        let d = PyDict::new(py);
        for (name, values) in g.tensors() {
            d.set_item(name, values.to_vec())?;
        }
        d.set_item("output_rows", to_rows(g.output_rows()))?;
        Ok(d)
    }

    /// Worst per-tensor relative error against central differences.
    #[pyo3(signature = (context, target, step=1e-5))]
    fn grad_check(&self, context: Vec<usize>, target: usize, step: f64) -> PyResult<f64> {
        Ok(model::grad_check(&self.params, &context, target, step).map_err(value_err)?.max_rel_error)
    }
}

/// Optimizer state for one [`Model`]: "sgd", "adam", "coupled" or
/// "scaled-coupled".
#[pyclass(module = "calab_py")]
struct Optimizer {
    inner: ModelOptimizer,
    grads: Option<Gradients>,
}

#[pymethods]
impl Optimizer {
    #[new]
    #[pyo3(signature = (model, kind, lr=1e-3, beta1=0.9, beta2=0.95, epsilon=1e-8, momentum=0.9, sgd_lr_factor=1.0, scale_exponent=0, weight_decay=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &Model,
        kind: &str,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        momentum: f64,
        sgd_lr_factor: f64,
        scale_exponent: i32,
        weight_decay: f64,
    ) -> PyResult<Self> {
        let kind: OptimizerKind = kind.parse().map_err(value_err)?;
        let cfg = OptimConfig {
            lr,
            beta1,
            beta2,
            epsilon,
            momentum,
            sgd_lr_factor,
            scale_exponent,
            weight_decay,
            ..OptimConfig::default()
        };
        let inner = ModelOptimizer::new(kind, cfg, &model.params).map_err(value_err)?;
        Ok(Self { inner, grads: None })
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step_count()
    }

    /// One update on a batch of `(context, target)` pairs at learning rate
    /// `lr` (the configured rate when omitted). Returns the batch loss and
    /// `Σᵢ uᵢ` over the output table.
    #[pyo3(signature = (model, batch, lr=None))]
    fn step(&mut self, model: &mut Model, batch: Vec<(Vec<usize>, usize)>, lr: Option<f64>) -> PyResult<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(PyValueError::new_err("empty batch"));
        }
        let examples: Vec<calab::corpus::Example<'_>> =
            batch.iter().map(|(c, t)| calab::corpus::Example { context: c, target: *t }).collect();
        let grads = self.grads.get_or_insert_with(|| Gradients::zeros_like(&model.params));
        let loss = model::batch_loss_and_grads(&model.params, &examples, grads).map_err(value_err)?;
        let lr = lr.unwrap_or(self.inner.cfg.lr);
        let record = self.inner.step(&mut model.params, grads, lr, true).map_err(value_err)?;
        Ok((loss, record.map(|r| r.update_sum).unwrap_or_default()))
    }

    /// Per-element effective learning rates of the output table.
    fn effective_lr(&self, model: &Model, lr: f64) -> Option<Vec<Vec<f64>>> {
        self.inner.effective_lr(&model.params, lr).as_ref().map(to_rows)
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_row_norm", r.mean_row_norm)?;
    for (name, v) in r.values() {
        d.set_item(name, v)?;
    }
    Ok(d)
}

#[pyfunction]
fn isotropy(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::isotropy(&to_matrix(rows)?).map_err(value_err)?.iso)
}

#[pyfunction]
fn kappa(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::kappa(&to_matrix(rows)?).map_err(value_err)?.kappa)
}

#[pyfunction]
fn rho(rows: Vec<Vec<f64>>, probs: Vec<f64>) -> PyResult<f64> {
    metrics::rho(&to_matrix(rows)?, &probs).map_err(value_err)
}

/// `(‖μ‖, mean row norm, ‖μ‖ʳ)`.
#[pyfunction]
fn mean_embedding_stats(rows: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64)> {
    let s = metrics::mean_embedding_stats(&to_matrix(rows)?).map_err(value_err)?;
    Ok((s.mu_norm, s.mean_row_norm, s.mu_ratio))
}

/// The full metrics panel (without `rbar`).
#[pyfunction]
fn embedding_metrics<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, probs: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = MetricsReport::compute(&to_matrix(rows)?, &probs, None).map_err(value_err)?;
    report_dict(py, &r)
}

/// Seed-paired test of whether `sample1` improves on `sample0`.
#[pyfunction]
fn significance<'py>(
    py: Python<'py>,
    sample0: Vec<f64>,
    sample1: Vec<f64>,
    direction: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::significance(&sample0, &sample1, parse_direction(direction)?).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("mean_diff", r.mean_diff)?;
    d.set_item("sigma_d", r.sigma_d)?;
    d.set_item("threshold", r.threshold)?;
    d.set_item("significant", r.significant)?;
    d.set_item("t_value_used", r.t_value_used)?;
    Ok(d)
}

#[pyfunction]
fn format_shorthand(mean: f64, std: f64) -> String {
    stats::format_shorthand(mean, std)
}

/// Token probabilities of the Zipfian generator, most frequent first.
#[pyfunction]
#[pyo3(signature = (types, exponent=1.0, seed=0))]
fn zipf_probabilities(types: usize, exponent: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(ZipfCorpus::new(types, exponent, seed).map_err(value_err)?.probabilities())
}

/// The default experiment config as JSON.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_json()
}

/// Trains one seed of the JSON config in memory and returns the run
/// manifest as JSON. Nothing is written to disk.
#[pyfunction]
fn train(py: Python<'_>, config_json: &str, seed: u64) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(harness_err)?;
    let manifest = py
        .detach(|| -> Result<_, HarnessError> {
            let data = Dataset::prepare(&cfg)?;
            Ok(run_seed(&cfg, &data, seed, None, None)?.0)
        })
        .map_err(harness_err)?;
    serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn calab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Optimizer>()?;
    m.add_function(wrap_pyfunction!(isotropy, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(mean_embedding_stats, m)?)?;
    m.add_function(wrap_pyfunction!(embedding_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(format_shorthand, m)?)?;
    m.add_function(wrap_pyfunction!(zipf_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("T_95_NU2", stats::T_95_NU2)?;
    Ok(())
}
