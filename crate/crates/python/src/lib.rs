use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use classmc::clustering::{self, ClassAssignment, LinkageTree, Merge};
use classmc::config::PipelineConfig;
use classmc::eval::{self, SyntheticSpec};
use classmc::hmcm::{self, HierarchicalParams, HmcmConfig};
use classmc::ingest::{self, ObservationRecord};
use classmc::smcm::{self, LatentFactorSet, SmcmConfig};
use classmc::vi::FitConfig;
use classmc::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        Error::NonFinite { .. } | Error::Generation(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn fit_config(seed: u64, max_iters: usize) -> FitConfig {
    FitConfig {
        seed,
        max_iters,
        ..Default::default()
    }
}

/// Observed entries indexed by solute (row) and solvent (column).
#[pyclass(name = "PropertyMatrix", frozen)]
pub struct PyPropertyMatrix {
    inner: ingest::PropertyMatrix,
}

#[pymethods]
impl PyPropertyMatrix {
    /// Builds a matrix from `(solute, solvent, value)` triples after
    /// averaging duplicates and applying the minimum-systems filter.
    #[staticmethod]
    #[pyo3(signature = (records, min_systems = 2))]
    fn from_records(records: Vec<(String, String, f64)>, min_systems: usize) -> PyResult<Self> {
        let records = records
            .into_iter()
            .map(|(s, w, y)| ObservationRecord::new(s, w, y))
            .collect();
        let (inner, _) = ingest::preprocess(records, min_systems).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Parses CSV text with header `solute,solvent,ln_gamma,quality`.
    #[staticmethod]
    #[pyo3(signature = (text, min_systems = 2))]
    fn from_csv(text: &str, min_systems: usize) -> PyResult<Self> {
        let records = ingest::parse_observations(text.as_bytes()).map_err(to_py)?;
        let (inner, _) = ingest::preprocess(records, min_systems).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_solutes(&self) -> usize {
        self.inner.n_solutes()
    }

    #[getter]
    fn n_solvents(&self) -> usize {
        self.inner.n_solvents()
    }

    #[getter]
    fn occupancy(&self) -> f64 {
        self.inner.occupancy()
    }

    #[getter]
    fn solutes(&self) -> Vec<String> {
        self.inner.solutes().to_vec()
    }

    #[getter]
    fn solvents(&self) -> Vec<String> {
        self.inner.solvents().to_vec()
    }

    /// `(row, col, value)` for every observed cell.
    fn entries(&self) -> Vec<(usize, usize, f64)> {
        self.inner.entries().iter().map(|e| (e.row, e.col, e.value)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PropertyMatrix({} solutes x {} solvents, {} entries)",
            self.inner.n_solutes(),
            self.inner.n_solvents(),
            self.inner.len()
        )
    }
}

/// Variational means of the standard model.
#[pyclass(name = "Factors", frozen)]
pub struct PyFactors {
    inner: LatentFactorSet,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    elbo_trace: Vec<(usize, f64)>,
}

#[pymethods]
impl PyFactors {
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        self.inner.u.to_rows()
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        self.inner.v.to_rows()
    }

    fn predict(&self, i: usize, j: usize) -> PyResult<f64> {
        smcm::predict(&self.inner, i, j).map_err(to_py)
    }

    /// Every cell of `U V^T`.
    fn complete(&self) -> Vec<Vec<f64>> {
        smcm::complete_matrix(&self.inner).to_rows()
    }
}

#[pyfunction]
#[pyo3(signature = (matrix, k = 4, sigma = 0.8, lambda_like = 0.15, seed = 0, max_iters = 20000))]
fn fit_smcm(
    py: Python<'_>,
    matrix: &PyPropertyMatrix,
    k: usize,
    sigma: f64,
    lambda_like: f64,
    seed: u64,
    max_iters: usize,
) -> PyResult<PyFactors> {
    let cfg = SmcmConfig {
        k,
        sigma_prior: sigma,
        lambda_like,
        fit: fit_config(seed, max_iters),
    };
    let fit = py.detach(|| smcm::fit_smcm(&matrix.inner, &cfg)).map_err(to_py)?;
    Ok(PyFactors {
        inner: fit.factors,
        iterations: fit.result.iterations,
        converged: fit.result.converged,
        elbo_trace: fit.result.trace.iter().map(|p| (p.iteration, p.elbo)).collect(),
    })
}

fn tree_from(n_leaves: usize, merges: Vec<(usize, usize, f64, usize)>) -> PyResult<LinkageTree> {
    let tree = LinkageTree {
        n_leaves,
        merges: merges
            .into_iter()
            .map(|(left, right, height, size)| Merge { left, right, height, size })
            .collect(),
    };
    tree.validate().map_err(to_py)?;
    Ok(tree)
}

/// Complete-linkage clustering; returns `(left, right, height, size)` merges.
#[pyfunction]
fn hac_complete(profiles: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize, f64, usize)>> {
    let tree = clustering::hac_complete(&profiles).map_err(to_py)?;
    Ok(tree.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect())
}

#[pyfunction]
fn cut_tree(n_leaves: usize, merges: Vec<(usize, usize, f64, usize)>, n_classes: usize) -> PyResult<Vec<usize>> {
    let tree = tree_from(n_leaves, merges)?;
    Ok(clustering::cut_tree(&tree, n_classes).map_err(to_py)?.labels)
}

#[pyfunction]
fn sorted_order(n_leaves: usize, merges: Vec<(usize, usize, f64, usize)>) -> PyResult<Vec<usize>> {
    Ok(clustering::sorted_order(&tree_from(n_leaves, merges)?))
}

/// Fitted hierarchical parameters.
#[pyclass(name = "HierarchicalFit", frozen)]
pub struct PyHierarchicalFit {
    inner: HierarchicalParams,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
}

#[pymethods]
impl PyHierarchicalFit {
    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        self.inner.a.to_rows()
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        self.inner.b.to_rows()
    }

    #[getter]
    fn sigma_r(&self) -> Vec<f64> {
        self.inner.sigma_r.clone()
    }

    #[getter]
    fn sigma_s(&self) -> Vec<f64> {
        self.inner.sigma_s.clone()
    }

    fn predict(&self, i: usize, j: usize) -> PyResult<f64> {
        hmcm::predict_hmcm(&self.inner, i, j).map_err(to_py)
    }

    /// Prediction for an unseen solute of class `r` in known solvent `j`.
    fn predict_cold_solute(&self, r: usize, j: usize) -> PyResult<f64> {
        if j >= self.inner.v.rows {
            return Err(PyValueError::new_err(format!("solvent index {j} out of range")));
        }
        hmcm::predict_cold_solute(&self.inner, r, self.inner.v.row(j)).map_err(to_py)
    }

    /// Prediction for known solute `i` in an unseen solvent of class `s`.
    fn predict_cold_solvent(&self, i: usize, s: usize) -> PyResult<f64> {
        if i >= self.inner.u.rows {
            return Err(PyValueError::new_err(format!("solute index {i} out of range")));
        }
        hmcm::predict_cold_solvent(&self.inner, s, self.inner.u.row(i)).map_err(to_py)
    }
}

fn assignment(labels: Vec<usize>) -> PyResult<ClassAssignment> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    ClassAssignment::new(labels, n).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (matrix, solute_classes, solvent_classes, k = 4, sigma_hp = 1.0, eta = 1.0, lambda_like = 0.15, seed = 0, max_iters = 20000))]
#[allow(clippy::too_many_arguments)]
fn fit_hmcm(
    py: Python<'_>,
    matrix: &PyPropertyMatrix,
    solute_classes: Vec<usize>,
    solvent_classes: Vec<usize>,
    k: usize,
    sigma_hp: f64,
    eta: f64,
    lambda_like: f64,
    seed: u64,
    max_iters: usize,
) -> PyResult<PyHierarchicalFit> {
    let rows = assignment(solute_classes)?;
    let cols = assignment(solvent_classes)?;
    let cfg = HmcmConfig {
        k,
        sigma_hp,
        lambda_like,
        eta,
        fit: fit_config(seed, max_iters),
    };
    let fit = py.detach(|| hmcm::fit_hmcm(&matrix.inner, &rows, &cols, &cfg)).map_err(to_py)?;
    Ok(PyHierarchicalFit {
        inner: fit.params,
        iterations: fit.result.iterations,
        converged: fit.result.converged,
    })
}

/// MAE, MSE and their standard errors.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, deltas: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::metrics(&deltas).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mae", m.mae)?;
    d.set_item("mse", m.mse)?;
    d.set_item("mae_stderr", m.mae_stderr)?;
    d.set_item("mse_stderr", m.mse_stderr)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (n_solutes = 30, n_solvents = 30, k = 4, n_solute_classes = 4, n_solvent_classes = 4, class_spread = 0.2, noise_scale = 0.05, occupancy = 0.3, seed = 0, rare_solute_observations = None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic<'py>(
    py: Python<'py>,
    n_solutes: usize,
    n_solvents: usize,
    k: usize,
    n_solute_classes: usize,
    n_solvent_classes: usize,
    class_spread: f64,
    noise_scale: f64,
    occupancy: f64,
    seed: u64,
    rare_solute_observations: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SyntheticSpec {
        n_solutes,
        n_solvents,
        k,
        n_solute_classes,
        n_solvent_classes,
        class_spread,
        noise_scale,
        occupancy,
        seed,
        rare_solute_observations,
    };
    let c = eval::generate_synthetic(&spec).map_err(to_py)?;
    let records: Vec<(String, String, f64)> = c
        .records
        .iter()
        .map(|r| (r.solute.clone(), r.solvent.clone(), r.ln_gamma))
        .collect();
    let d = PyDict::new(py);
    d.set_item("records", records)?;
    d.set_item("truth", c.truth.to_rows())?;
    d.set_item("solute_labels", c.solute_labels)?;
    d.set_item("solvent_labels", c.solvent_labels)?;
    d.set_item("u", c.u.to_rows())?;
    d.set_item("v", c.v.to_rows())?;
    d.set_item("observed", c.observed)?;
    d.set_item("solute_keys", c.solute_keys)?;
    d.set_item("solvent_keys", c.solvent_keys)?;
    d.set_item("rare_solute", c.rare_solute)?;
    Ok(d)
}

/// Runs every stage on `input`, writing artifacts into `out_dir`. Returns
/// the manifest's config hash.
#[pyfunction]
#[pyo3(signature = (input, out_dir, config = None, seed = None))]
fn run_pipeline(py: Python<'_>, input: &str, out_dir: &str, config: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = match config {
        Some(text) => PipelineConfig::parse(text).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = py
        .detach(|| classmc::pipeline::run_pipeline(&cfg, input.as_ref(), out_dir.as_ref()))
        .map_err(to_py)?;
    Ok(manifest.config_hash)
}

#[pymodule(name = "classmc")]
fn classmc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPropertyMatrix>()?;
    m.add_class::<PyFactors>()?;
    m.add_class::<PyHierarchicalFit>()?;
    m.add_function(wrap_pyfunction!(fit_smcm, m)?)?;
    m.add_function(wrap_pyfunction!(hac_complete, m)?)?;
    m.add_function(wrap_pyfunction!(cut_tree, m)?)?;
    m.add_function(wrap_pyfunction!(sorted_order, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hmcm, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
