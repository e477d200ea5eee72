//! Python bindings for `blendfit`.
//!
//! Hyper-parameters and benchmark settings are passed as keyword arguments
//! named like the fields of `HyperParams` and `BenchmarkSpec`; unknown names
//! raise `ValueError`.

use blendfit::benchmark::{self, BenchmarkSpec};
use blendfit::{io, Dataset, Expert, FeatureMap, HyperParams, MixtureModel, WeightSequence};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: blendfit::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// `base` with the entries of `kwargs` written over its fields.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let mut value = serde_json::to_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(kw) = kwargs {
        let text: String = kw.py().import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let extra: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let obj = value.as_object_mut().expect("settings serialise to an object");
        obj.extend(extra);
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_json<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Regressor rows, outputs and optional ground-truth weights.
#[pyclass(name = "Dataset", module = "blendfit_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (regressors, outputs, true_weights=None))]
    fn new(regressors: Vec<Vec<f64>>, outputs: Vec<f64>, true_weights: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mut d = Dataset::new(regressors, outputs).map_err(err)?;
        if let Some(w) = true_weights {
            d = d.with_true_weights(WeightSequence::from_rows(w).map_err(err)?).map_err(err)?;
        }
        Ok(Self { inner: d })
    }

    /// Reads a dataset CSV with columns `t,y,x1..xn[,omega1..omegaM]`.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_dataset(&path).map_err(err)? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_dataset(&path, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn regressors(&self) -> Vec<Vec<f64>> {
        self.inner.regressors().to_vec()
    }

    #[getter]
    fn outputs(&self) -> Vec<f64> {
        self.inner.outputs().to_vec()
    }

    #[getter]
    fn true_weights(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.true_weights().map(WeightSequence::to_rows)
    }

    /// Rows `start..end` as a new dataset.
    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.slice(start, end).map_err(err)? })
    }
}

/// Fitted experts, training weights and the settings used to fit them.
#[pyclass(name = "Model", module = "blendfit_py", frozen)]
struct PyModel {
    inner: MixtureModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_model(&path).map_err(err)? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_model(&path, &self.inner).map_err(err)
    }

    /// `(feature map, parameters)` for each expert.
    #[getter]
    fn experts(&self) -> Vec<(String, Vec<f64>)> {
        self.inner.experts.iter().map(|e| (e.map.to_string(), e.params.clone())).collect()
    }

    #[getter]
    fn train_weights(&self) -> Vec<Vec<f64>> {
        self.inner.train_weights.to_rows()
    }

    #[getter]
    fn hyper(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_json(py, &self.inner.hyper)
    }

    /// Total cost after each outer iteration.
    #[getter]
    fn cost_trace(&self) -> Vec<f64> {
        self.inner.cost_trace.iter().map(|c| c.total).collect()
    }

    /// Mixture output for one regressor and one weight vector.
    fn output(&self, omega: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&omega, &x).map_err(err)
    }

    /// Outputs and weights for new regressors.
    ///
    /// `mode` is `recursive` (chained from uniform weights), `filtered`
    /// (needs `outputs`) or `gating` (nearest training regressors).
    #[pyo3(signature = (regressors, mode="recursive", outputs=None, **hyper))]
    fn predict(
        &self,
        py: Python<'_>,
        regressors: Vec<Vec<f64>>,
        mode: &str,
        outputs: Option<Vec<f64>>,
        hyper: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let h = overlay(&self.inner.hyper, hyper)?;
        let model = &self.inner;
        let (y, w) = py
            .detach(|| -> blendfit::Result<(Vec<f64>, WeightSequence)> {
                match mode {
                    "recursive" => {
                        let m = model.n_experts();
                        let mut prev = vec![1.0 / m as f64; m];
                        let mut y = Vec::with_capacity(regressors.len());
                        let mut rows = Vec::with_capacity(regressors.len());
                        for x in &regressors {
                            let est = blendfit::predict_recursive(x, &prev, &model.experts, &h)?;
                            prev.clone_from(&est.omega);
                            y.push(est.y_hat);
                            rows.push(est.omega);
                        }
                        Ok((y, WeightSequence::from_rows(rows)?))
                    }
                    "filtered" => {
                        let ys = outputs.as_deref().ok_or_else(|| {
                            blendfit::Error::InvalidArgument("filtered mode needs outputs".into())
                        })?;
                        blendfit::predict_filtered(&regressors, ys, &model.experts, &h)
                    }
                    "gating" => {
                        let gating = match &model.gating {
                            Some(g) if g.k == h.gating_k => g.clone(),
                            Some(g) => blendfit::train_gating(&g.train_x, &g.train_w, h.gating_k)?,
                            None => return Err(blendfit::Error::InvalidArgument("model has no gating model".into())),
                        };
                        let mut y = Vec::with_capacity(regressors.len());
                        let mut rows = Vec::with_capacity(regressors.len());
                        for x in &regressors {
                            let omega = blendfit::gate_predict(&gating, x)?;
                            y.push(model.predict(&omega, x)?);
                            rows.push(omega);
                        }
                        Ok((y, WeightSequence::from_rows(rows)?))
                    }
                    other => Err(blendfit::Error::InvalidArgument(format!(
                        "unknown mode '{other}' (expected recursive, filtered or gating)"
                    ))),
                }
            })
            .map_err(err)?;
        Ok((y, w.to_rows()))
    }
}

/// Result of `fit`.
#[pyclass(name = "FitReport", module = "blendfit_py", frozen, get_all)]
struct PyFitReport {
    model: Py<PyModel>,
    final_cost: f64,
    iterations: usize,
    termination_reason: String,
    restart_index: usize,
    restart_costs: Vec<f64>,
}

/// Simulates the two-expert ARX benchmark; returns `(dataset, snr_db)`.
#[pyfunction]
#[pyo3(signature = (**spec))]
fn simulate(spec: Option<&Bound<'_, PyDict>>) -> PyResult<(PyDataset, f64)> {
    let s: BenchmarkSpec = overlay(&BenchmarkSpec::default(), spec)?;
    let sim = benchmark::simulate(&s).map_err(err)?;
    Ok((PyDataset { inner: sim.dataset }, sim.snr_db))
}

/// Fits experts and weights with random restarts.
///
/// `experts` names one feature map per expert (`linear`, `poly2`, ...).
/// A gating model over the training regressors is attached to the result.
#[pyfunction]
#[pyo3(signature = (dataset, experts=None, initial_weights=None, **hyper))]
fn fit(
    py: Python<'_>,
    dataset: &PyDataset,
    experts: Option<Vec<String>>,
    initial_weights: Option<Vec<Vec<f64>>>,
    hyper: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyFitReport> {
    let specs: Vec<FeatureMap> = match experts {
        Some(names) => names.iter().map(|n| n.parse()).collect::<blendfit::Result<_>>().map_err(err)?,
        None => vec![FeatureMap::Linear; 2],
    };
    let h = overlay(&HyperParams::default(), hyper)?;
    h.validate(specs.len()).map_err(err)?;
    let prior = initial_weights.map(WeightSequence::from_rows).transpose().map_err(err)?;
    let d = &dataset.inner;
    let report = py
        .detach(|| -> blendfit::Result<_> {
            let mut report = blendfit::multistart_fit(d, &specs, &h, prior.as_ref())?;
            let k = h.gating_k.min(d.len());
            report.model.gating = Some(blendfit::train_gating(d.regressors(), &report.model.train_weights, k)?);
            Ok(report)
        })
        .map_err(err)?;
    Ok(PyFitReport {
        final_cost: report.final_cost(),
        iterations: report.iterations,
        termination_reason: report.termination_reason.to_string(),
        restart_index: report.restart_index,
        restart_costs: report.all_restart_costs.clone(),
        model: Py::new(py, PyModel { inner: report.model })?,
    })
}

/// Cost breakdown of experts and weights on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, experts, weights, **hyper))]
fn total_cost(
    py: Python<'_>,
    dataset: &PyDataset,
    experts: Vec<(String, Vec<f64>)>,
    weights: Vec<Vec<f64>>,
    hyper: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let experts = experts
        .into_iter()
        .map(|(map, params)| Ok(Expert::new(map.parse().map_err(err)?, params)))
        .collect::<PyResult<Vec<_>>>()?;
    let w = WeightSequence::from_rows(weights).map_err(err)?;
    let h = overlay(&HyperParams::default(), hyper)?;
    let cost = blendfit::total_cost(&dataset.inner, &experts, &w, &h).map_err(err)?;
    to_json(py, &cost)
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_simplex(v: Vec<f64>) -> PyResult<Vec<f64>> {
    blendfit::project_simplex(&v).map_err(err)
}

/// Mean absolute error.
#[pyfunction]
fn mae(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    benchmark::mae(&y_true, &y_pred).map_err(err)
}

/// Goodness of fit `max(0, 1 - SSE/SST)`.
#[pyfunction]
fn gof(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    benchmark::gof(&y_true, &y_pred).map_err(err)
}

/// Default hyper-parameters as a dict.
#[pyfunction]
fn default_hyper(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_json(py, &HyperParams::default())
}

#[pymodule]
fn blendfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyFitReport>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(total_cost, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(gof, m)?)?;
    m.add_function(wrap_pyfunction!(default_hyper, m)?)?;
    Ok(())
}
