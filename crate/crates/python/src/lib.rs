//! Python bindings: dataset generation, training, analysis and verification.

use least_volume::analysis::Analyzer;
use least_volume::checkpoint::{load_checkpoint, save_checkpoint};
use least_volume::data;
use least_volume::model::{build_autoencoder, ModelSpec};
use least_volume::train::TrainConfig;
use least_volume::{verify, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: least_volume::Error) -> PyErr {
    match e {
        least_volume::Error::Io(e) => PyIOError::new_err(e.to_string()),
        least_volume::Error::InvalidArgument(m) | least_volume::Error::InvalidSpec(m) => PyValueError::new_err(m),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Training config: `preset` defaults with the JSON object `overrides` on top.
pub fn train_config(preset: &str, overrides: Option<&str>) -> least_volume::Result<TrainConfig> {
    let base = TrainConfig::preset(preset).or_else(|_| match preset {
        "linear" | "default" => Ok(TrainConfig::default()),
        _ => Err(least_volume::Error::InvalidArgument(format!("unknown preset {preset:?}"))),
    })?;
    let Some(text) = overrides else { return Ok(base) };
    let bad = |e: serde_json::Error| least_volume::Error::InvalidArgument(format!("invalid overrides: {e}"));
    let mut value = serde_json::to_value(&base).map_err(bad)?;
    let patch: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(least_volume::Error::InvalidArgument("overrides must be a JSON object".into()));
    };
    let obj = value.as_object_mut().expect("config serializes to an object");
    for (k, v) in patch {
        obj.insert(k, v);
    }
    let cfg: TrainConfig = serde_json::from_value(value).map_err(bad)?;
    cfg.validate()?;
    Ok(cfg)
}

#[pyclass(name = "Dataset", module = "least_volume_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Wraps row-major `samples` of shape `shape` (first axis = samples).
    #[new]
    #[pyo3(signature = (samples, shape, factors=None))]
    fn new(samples: Vec<f64>, shape: Vec<usize>, factors: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let samples = Tensor::new(shape, samples).map_err(to_py)?;
        let factors = factors
            .map(|rows| Tensor::from_rows(&rows))
            .transpose()
            .map_err(to_py)?;
        Ok(Self { inner: data::Dataset::new(samples, factors, "python").map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: data::load_dataset(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save_dataset(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.samples.shape().to_vec()
    }

    /// Flat row-major sample values.
    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.inner.samples.data().to_vec()
    }

    #[getter]
    fn factors(&self) -> Option<Vec<Vec<f64>>> {
        let f = self.inner.factors.as_ref()?;
        Some(f.data().chunks_exact(f.shape()[1]).map(<[f64]>::to_vec).collect())
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }
}

/// Generates `curve1d`, `surface2d` or `circles` data.
#[pyfunction]
#[pyo3(signature = (kind, n=None, seed=0, size=16, noise=0.1))]
fn generate(kind: &str, n: Option<usize>, seed: u64, size: usize, noise: f64) -> PyResult<PyDataset> {
    let inner = match kind {
        "curve1d" => data::gen_curve1d(n.unwrap_or(50), seed),
        "surface2d" => data::gen_surface2d(n.unwrap_or(100), seed, noise),
        "circles" => data::gen_circles(n.unwrap_or(3000), size, seed),
        other => return Err(PyValueError::new_err(format!("unknown dataset kind {other:?}"))),
    }
    .map_err(to_py)?;
    Ok(PyDataset { inner })
}

#[pyclass(name = "Model", module = "least_volume_py")]
pub struct PyModel {
    inner: least_volume::model::Model,
}

#[pymethods]
impl PyModel {
    /// Fresh autoencoder of architecture `arch` for `dataset`'s sample shape.
    #[staticmethod]
    #[pyo3(signature = (arch, dataset, seed=0, latent_dim=None, spectral_norm=true))]
    fn build(arch: &str, dataset: &PyDataset, seed: u64, latent_dim: Option<usize>, spectral_norm: bool) -> PyResult<Self> {
        let spec = ModelSpec::for_data(arch, latent_dim, dataset.inner.sample_shape()).map_err(to_py)?;
        let spec = if spectral_norm { spec } else { spec.without_spectral_norm() };
        Ok(Self { inner: build_autoencoder(&spec, seed).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    /// Trains in place and returns the history CSV. `overrides` is a JSON
    /// object of config fields applied over `preset`.
    #[pyo3(signature = (dataset, preset="toy1d", overrides=None))]
    fn train(&mut self, py: Python<'_>, dataset: &PyDataset, preset: &str, overrides: Option<&str>) -> PyResult<String> {
        let cfg = train_config(preset, overrides).map_err(to_py)?;
        let model = self.inner.clone();
        let samples = &dataset.inner.samples;
        let (model, history) = py.detach(|| least_volume::train::train(model, samples, &cfg)).map_err(to_py)?;
        self.inner = model;
        Ok(history.to_csv())
    }

    /// Latent codes as rows.
    fn encode(&self, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        let z = self.inner.encode(&dataset.inner.samples).map_err(to_py)?;
        Ok(z.data().chunks_exact(self.inner.latent_dim()).map(<[f64]>::to_vec).collect())
    }

    /// Flat row-major reconstructions.
    fn reconstruct(&self, dataset: &PyDataset) -> PyResult<Vec<f64>> {
        Ok(self.inner.reconstruct(&dataset.inner.samples).map_err(to_py)?.into_data())
    }

    /// Latent dimension report as a dict.
    #[pyo3(signature = (dataset, threshold=0.01, delta=0.05))]
    fn analyze<'py>(&self, py: Python<'py>, dataset: &PyDataset, threshold: f64, delta: f64) -> PyResult<Bound<'py, PyAny>> {
        let a = Analyzer::new(&self.inner, &dataset.inner.samples).map_err(to_py)?;
        let report = a.report(threshold, delta).map_err(to_py)?;
        let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }
}

/// Runs a verification suite and returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (suite, seed=0))]
fn run_verify<'py>(py: Python<'py>, suite: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| verify::run_suite(suite, seed)).map_err(to_py)?;
    json_to_py(py, &report.to_json())
}

#[pymodule]
fn least_volume_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add("SUITES", verify::SUITES.to_vec())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
