//! Python bindings for the `bayescall` simulator, trainer and evaluator.

use std::collections::HashMap;
use std::path::PathBuf;

use bayescall::commands::{cmd_eval, cmd_mask_eval, cmd_simulate, cmd_train};
use bayescall::config::{parse_row_range, RunConfig};
use bayescall::layers::HeadKind;
use bayescall::metrics::{encode_dataset, predict_all};
use bayescall::pileup::load_dataset;
use bayescall::variational::{kl_gaussian_diag, softplus_sigma, GaussianPrior, GaussianVariationalParams};
use bayescall::{checkpoint, Error, Tensor};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Config { .. } | Error::Domain(_) | Error::Dimension(_) | Error::Format { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(overrides: Option<HashMap<String, String>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut kv: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
    kv.sort();
    for (k, v) in kv {
        cfg.set(&k, &v).map_err(py_err)?;
    }
    Ok(cfg)
}

/// Simulates a dataset into `out`; returns `(before, after)` class counts.
#[pyfunction]
#[pyo3(signature = (out, n=None, seed=None, balance=false, overrides=None))]
fn simulate(
    out: PathBuf,
    n: Option<usize>,
    seed: Option<u64>,
    balance: bool,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<((usize, usize), (usize, usize))> {
    let mut cfg = config(overrides)?;
    if let Some(n) = n {
        cfg.n_examples = n;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.balance |= balance;
    let s = cmd_simulate(&cfg, &out).map_err(py_err)?;
    Ok((s.before, s.after))
}

type EpochRow = (usize, f64, f64, f64, f64);

/// Trains on the training partition of `data`; returns the epoch log as
/// `(epoch, nll, kl, total, train_accuracy)` tuples.
#[pyfunction]
#[pyo3(signature = (data, out, head=None, overrides=None))]
fn train(
    data: PathBuf,
    out: PathBuf,
    head: Option<&str>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<Vec<EpochRow>> {
    let cfg = config(overrides)?;
    let head = match head {
        Some(h) => h.parse::<HeadKind>().map_err(py_err)?,
        None => cfg.head,
    };
    let log = cmd_train(&cfg, &data, head, &out, |_| {}).map_err(py_err)?;
    Ok(log
        .iter()
        .map(|e| (e.epoch, e.nll, e.kl, e.total, e.train_accuracy))
        .collect())
}

/// Evaluates on the test partition; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (model, data, out, overrides=None))]
fn evaluate(
    model: PathBuf,
    data: PathBuf,
    out: PathBuf,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<String> {
    let cfg = config(overrides)?;
    cmd_eval(&cfg, &model, &data, &out)
        .and_then(|r| r.to_json())
        .map_err(py_err)
}

/// Clean versus row-masked evaluation; returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (model, data, out, mask_rows=None, overrides=None))]
fn mask_eval(
    model: PathBuf,
    data: PathBuf,
    out: PathBuf,
    mask_rows: Option<&str>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<String> {
    let mut cfg = config(overrides)?;
    if let Some(r) = mask_rows {
        cfg.eval.mask_rows = parse_row_range("mask_rows", r).map_err(py_err)?;
    }
    cmd_mask_eval(&cfg, &model, &data, &out)
        .and_then(|o| o.summary.to_json())
        .map_err(py_err)
}

/// σ = softplus(ρ).
#[pyfunction]
fn softplus(rho: f64) -> f64 {
    softplus_sigma(rho)
}

/// KL(q || p) for a diagonal Gaussian `q = N(mu, softplus(rho)^2)` against
/// a zero-mean prior with scale `prior_sigma`.
#[pyfunction]
fn kl_gaussian(mu: Vec<f64>, rho: Vec<f64>, prior_sigma: f64) -> PyResult<f64> {
    let q = GaussianVariationalParams::new(Tensor::vector(mu), Tensor::vector(rho)).map_err(py_err)?;
    let p = GaussianPrior::new(prior_sigma).map_err(py_err)?;
    kl_gaussian_diag(&q, &p).map_err(py_err)
}

/// A trained checkpoint.
#[pyclass(module = "bayescall_py", frozen)]
struct Model {
    inner: bayescall::layers::Model,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: checkpoint::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.spec.depth
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.spec.width
    }

    #[getter]
    fn head(&self) -> String {
        self.inner.spec.head.to_string()
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.values().map(|t| t.len()).sum()
    }

    /// Somatic-class probabilities for every example of a dataset file,
    /// optionally with 1-based rows `(lo, hi)` blanked.
    #[pyo3(signature = (data, n_mc=1, seed=0, mask=None))]
    fn predict(
        &self,
        data: PathBuf,
        n_mc: usize,
        seed: u64,
        mask: Option<(usize, usize)>,
    ) -> PyResult<Vec<f64>> {
        let ds = load_dataset(&data).map_err(py_err)?;
        let xs = encode_dataset(&ds, mask.map(|(lo, hi)| lo..=hi)).map_err(py_err)?;
        let preds = predict_all(&self.inner, &xs, n_mc, seed).map_err(py_err)?;
        Ok(preds.iter().map(|p| p.probs[1]).collect())
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        checkpoint::to_bytes(&self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(depth={}, width={}, head='{}')",
            self.inner.spec.depth, self.inner.spec.width, self.inner.spec.head
        )
    }
}

#[pymodule]
fn bayescall_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mask_eval, m)?)?;
    m.add_function(wrap_pyfunction!(softplus, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
