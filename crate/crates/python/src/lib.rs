//! Python bindings over the core crate. Structured results cross the
//! boundary as JSON and come back as plain dicts and lists.

use std::path::PathBuf;

use desp::checkpoint::Checkpoint;
use desp::datasets::{generate as gen_examples, read_jsonl, write_jsonl, GenSpec, Task};
use desp::eval::{evaluate, predict_all, PredictOptions};
use desp::losses;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: desp::DespError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn task(name: &str) -> PyResult<Task> {
    name.parse().map_err(|e: desp::DespError| PyValueError::new_err(e.to_string()))
}

/// Squared-distance optimal matching; returns `(cost, [(i, j), ...])`.
#[pyfunction]
fn hungarian(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, Vec<(usize, usize)>)> {
    let (cost, assignment) = losses::hungarian(&a, &b).map_err(err)?;
    Ok((cost, assignment.pairs))
}

#[pyfunction]
fn chamfer(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    losses::chamfer(&a, &b).map_err(err)
}

#[pyfunction]
fn set_size_rmse(true_sizes: Vec<usize>, pred_sizes: Vec<usize>) -> PyResult<f64> {
    losses::set_size_rmse(&true_sizes, &pred_sizes).map_err(err)
}

/// Generates a dataset; written as JSON lines when `out` is given,
/// returned as a list of dicts otherwise.
#[pyfunction]
#[pyo3(signature = (dataset, count, seed, min_size=3, max_size=10, out=None))]
fn generate<'py>(
    py: Python<'py>,
    dataset: &str,
    count: usize,
    seed: u64,
    min_size: usize,
    max_size: usize,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = GenSpec { task: task(dataset)?, count, seed, sizes: min_size..=max_size };
    let data = gen_examples(&spec).map_err(err)?;
    match out {
        Some(path) => {
            write_jsonl(&path, &data).map_err(err)?;
            Ok(py.None().into_bound(py))
        }
        None => {
            let text = serde_json::to_string(&data).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            from_json(py, &text)
        }
    }
}

/// A trained model loaded from a checkpoint file.
#[pyclass(name = "Checkpoint")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Checkpoint::load(&path).map_err(err)? })
    }

    #[getter]
    fn kind(&self) -> PyResult<String> {
        Ok(self.inner.model().map_err(err)?.label().to_string())
    }

    /// Predicted sets (padding removed) per example of a JSON-lines file.
    #[pyo3(signature = (data, samples=1, seed=0))]
    fn predict(&self, data: PathBuf, samples: usize, seed: u64) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let model = self.inner.model().map_err(err)?;
        let examples = read_jsonl(&data).map_err(err)?;
        let opts = PredictOptions { sampler: self.inner.config.sampler.clone(), samples, seed };
        let preds = predict_all(&model, &examples, &opts).map_err(err)?;
        Ok(preds.into_iter().map(|p| p.into_iter().map(|s| s.set).collect()).collect())
    }

    /// Metric rows, as written by `desp eval`.
    #[pyo3(signature = (data, seed=0))]
    fn evaluate<'py>(&self, py: Python<'py>, data: PathBuf, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let model = self.inner.model().map_err(err)?;
        let examples = read_jsonl(&data).map_err(err)?;
        let task = model.task().task;
        let opts = PredictOptions::for_task(task, self.inner.config.sampler.clone(), seed);
        let (rows, _) = evaluate(&model, &examples, &opts).map_err(err)?;
        let text = serde_json::to_string(&rows).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        from_json(py, &text)
    }
}

/// Runs the command-line interface in-process; returns its exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    desp::cli::run(std::iter::once("desp".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "desp")]
fn desp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(set_size_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    m.add_class::<PyCheckpoint>()?;
    Ok(())
}
