//! Python module `kinetic_mmm`.

use kinetic_mmm_core::dataset::{self, ColumnMapping, GeneratorSpec, TimeSeriesDataset};
use kinetic_mmm_core::funnel::{self, Bounds};
use kinetic_mmm_core::inference::{self, ModelSpec, PosteriorDraws, SamplerConfig, Variant};
use kinetic_mmm_core::metrics::{self, RegionThresholds};
use kinetic_mmm_core::transforms::{self, AdstockParams, BoltzmannParams, CarryoverParams, HillParams, MMParams};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Any serializable value as plain Python objects (dicts, lists, floats).
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyclass(name = "Dataset", module = "kinetic_mmm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TimeSeriesDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, media_columns, response_column, control_columns = Vec::new(), time_column = "date".to_string()))]
    fn from_csv(
        path: &str,
        media_columns: Vec<String>,
        response_column: String,
        control_columns: Vec<String>,
        time_column: String,
    ) -> PyResult<Self> {
        let mapping = ColumnMapping {
            time_column,
            media_columns,
            control_columns,
            response_column,
        };
        let inner = dataset::load_csv(path, &mapping).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(value_err)
    }

    #[getter]
    fn n_weeks(&self) -> usize {
        self.inner.n_weeks()
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names().to_vec()
    }

    #[getter]
    fn control_names(&self) -> Vec<String> {
        self.inner.control_names().to_vec()
    }

    #[getter]
    fn media(&self) -> Vec<Vec<f64>> {
        self.inner.media().to_vec()
    }

    #[getter]
    fn controls(&self) -> Vec<Vec<f64>> {
        self.inner.controls().to_vec()
    }

    #[getter]
    fn response(&self) -> Vec<f64> {
        self.inner.response().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.time().iter().map(|d| d.to_string()).collect()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Copy with channel `index` multiplied by `factor`.
    fn with_scaled_channel(&self, index: usize, factor: f64) -> PyResult<Self> {
        if index >= self.inner.n_channels() {
            return Err(value_err(format!("channel index {index} out of range")));
        }
        let inner = self.inner.with_scaled_channel(index, factor).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.n_weeks()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(weeks={}, channels={:?}, controls={:?})",
            self.inner.n_weeks(),
            self.inner.channel_names(),
            self.inner.control_names()
        )
    }
}

/// Synthetic dataset plus its ground truth (as a dict).
#[pyfunction]
#[pyo3(signature = (n_weeks = 144, n_channels = 10, n_controls = 2, seed = 42, noise_sd = None))]
fn generate_synthetic(
    py: Python<'_>,
    n_weeks: usize,
    n_channels: usize,
    n_controls: usize,
    seed: u64,
    noise_sd: Option<f64>,
) -> PyResult<(PyDataset, Bound<'_, PyAny>)> {
    let mut spec = GeneratorSpec::with_dimensions(n_weeks, n_channels, n_controls, seed);
    if let Some(s) = noise_sd {
        spec.noise_sd = s;
    }
    let (ds, truth) = dataset::generate_synthetic(&spec).map_err(value_err)?;
    Ok((PyDataset { inner: ds }, to_py(py, &truth)?))
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.as_str()).collect()
}

#[pyfunction]
fn michaelis_menten(x: f64, vmax: f64, km: f64) -> PyResult<f64> {
    let p = MMParams::new(vmax, km).map_err(value_err)?;
    Ok(transforms::michaelis_menten(x, &p))
}

#[pyfunction]
#[pyo3(signature = (x, half_sat, exponent, scale = 1.0))]
fn hill(x: f64, half_sat: f64, exponent: f64, scale: f64) -> PyResult<f64> {
    let p = HillParams::new(half_sat, exponent, scale).map_err(value_err)?;
    Ok(transforms::hill(x, &p))
}

#[pyfunction]
#[pyo3(signature = (x, alpha, delay = 0.0, max_lag = 13))]
fn adstock(x: Vec<f64>, alpha: f64, delay: f64, max_lag: usize) -> PyResult<Vec<f64>> {
    let p = AdstockParams::new(alpha, delay, max_lag).map_err(value_err)?;
    Ok(transforms::adstock(&x, &p))
}

#[pyfunction]
#[pyo3(signature = (x, retention, delay = 0.0, max_lag = 13))]
fn carryover(x: Vec<f64>, retention: f64, delay: f64, max_lag: usize) -> PyResult<Vec<f64>> {
    let p = CarryoverParams::new(retention, delay, max_lag).map_err(value_err)?;
    Ok(transforms::carryover(&x, &p))
}

/// `out_i = a_i x_i + b_i * sum_{j != i} x_j`, column-wise.
#[pyfunction]
fn boltzmann_mix(columns: Vec<Vec<f64>>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let p = BoltzmannParams::new(a, b).map_err(value_err)?;
    transforms::boltzmann_mix(&columns, &p).map_err(value_err)
}

#[pyfunction]
fn elastic_collision(v1: [f64; 3], v2: [f64; 3], omega: [f64; 3]) -> PyResult<([f64; 3], [f64; 3])> {
    funnel::elastic_collision(v1, v2, omega).map_err(value_err)
}

/// Bounded least squares for `z ~ a v_i + b v_j`.
#[pyfunction]
#[pyo3(signature = (v_i, v_j, z, a_bounds = (0.0, 2.0), b_bounds = (0.0, 1.0)))]
fn estimate_pair<'py>(
    py: Python<'py>,
    v_i: Vec<f64>,
    v_j: Vec<f64>,
    z: Vec<f64>,
    a_bounds: (f64, f64),
    b_bounds: (f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    let bounds = Bounds { a: a_bounds, b: b_bounds };
    let e = funnel::estimate_pair(&v_i, &v_j, &z, &bounds).map_err(value_err)?;
    to_py(py, &e)
}

#[pyfunction]
fn fit_metrics<'py>(py: Python<'py>, y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let m = metrics::fit_metrics(&y, &y_hat).map_err(value_err)?;
    to_py(py, &m)
}

#[pyfunction]
#[pyo3(signature = (spend, contribution, k = None, conversions = None, response_total = None))]
fn channel_economics<'py>(
    py: Python<'py>,
    spend: Vec<f64>,
    contribution: Vec<f64>,
    k: Option<f64>,
    conversions: Option<f64>,
    response_total: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let e = metrics::channel_economics(
        &spend,
        &contribution,
        conversions,
        k,
        response_total,
        &RegionThresholds::default(),
    )
    .map_err(value_err)?;
    to_py(py, &e)
}

/// Posterior draws with diagnostics.
#[pyclass(name = "Fit", module = "kinetic_mmm", frozen)]
struct PyFit {
    inner: PosteriorDraws,
}

#[pymethods]
impl PyFit {
    /// Scale `dataset`, build the model and run the sampler. The GIL is
    /// released while sampling.
    #[staticmethod]
    #[pyo3(signature = (
        dataset, variant = "mm_carryover", chains = 4, warmup = 1000, draws = 1000, seed = 1,
        max_lag = 13, include_trend = false, fourier_terms = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn run(
        py: Python<'_>,
        dataset: &PyDataset,
        variant: &str,
        chains: usize,
        warmup: usize,
        draws: usize,
        seed: u64,
        max_lag: usize,
        include_trend: bool,
        fourier_terms: usize,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(PyValueError::new_err)?;
        let spec = ModelSpec {
            max_lag,
            include_trend,
            fourier_terms,
            ..ModelSpec::new(variant)
        };
        let cfg = SamplerConfig::new(chains, warmup, draws, seed);
        let ds = &dataset.inner;
        let inner = py
            .detach(|| {
                let (scaled, scale) = dataset::scale_dataset(ds).map_err(|e| e.to_string())?;
                let model = inference::build_model(&scaled, &scale, &spec).map_err(|e| e.to_string())?;
                inference::sample(&model, &cfg).map_err(|e| e.to_string())
            })
            .map_err(PyValueError::new_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.spec.variant.as_str()
    }

    #[getter]
    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    #[getter]
    fn n_chains(&self) -> usize {
        self.inner.n_chains()
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.inner.n_draws()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn rhat(&self) -> Vec<(String, f64)> {
        self.inner.param_names().into_iter().zip(self.inner.rhat.iter().copied()).collect()
    }

    #[getter]
    fn ess(&self) -> Vec<(String, f64)> {
        self.inner.param_names().into_iter().zip(self.inner.ess.iter().copied()).collect()
    }

    /// Pooled draws of one parameter, original units.
    fn draws(&self, name: &str) -> PyResult<Vec<f64>> {
        let i = self
            .inner
            .param_index(name)
            .ok_or_else(|| value_err(format!("no parameter named {name:?}")))?;
        Ok(self.inner.values(i))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &inference::posterior_summary(&self.inner))
    }

    fn predict<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
        let p = inference::predict(&self.inner, &dataset.inner).map_err(value_err)?;
        to_py(py, &p)
    }

    fn decompose<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
        let d = inference::decompose(&self.inner, &dataset.inner).map_err(value_err)?;
        to_py(py, &d)
    }

    /// Channel name to percent of total response.
    fn contribution_percent(&self, dataset: &PyDataset) -> PyResult<Vec<(String, f64)>> {
        let d = inference::decompose(&self.inner, &dataset.inner).map_err(value_err)?;
        let s = inference::contribution_percent(&d.contributions, dataset.inner.response()).map_err(value_err)?;
        Ok(s.channels)
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(variant={}, chains={}, draws={}, converged={})",
            self.inner.spec.variant,
            self.inner.n_chains(),
            self.inner.n_draws(),
            self.inner.converged()
        )
    }
}

#[pymodule]
fn kinetic_mmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(michaelis_menten, m)?)?;
    m.add_function(wrap_pyfunction!(hill, m)?)?;
    m.add_function(wrap_pyfunction!(adstock, m)?)?;
    m.add_function(wrap_pyfunction!(carryover, m)?)?;
    m.add_function(wrap_pyfunction!(boltzmann_mix, m)?)?;
    m.add_function(wrap_pyfunction!(elastic_collision, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(fit_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(channel_economics, m)?)?;
    Ok(())
}
