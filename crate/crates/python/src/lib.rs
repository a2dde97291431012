//! Python bindings for cell encodings, benchmark tables and statistics.

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wsnas::bench::{BenchTable, MetricsRecord};
use wsnas::cell::{self, CellGraph, MacroConfig, SearchSpace, SearchSpaceSpec};
use wsnas::search;
use wsnas::stats::{self, Alternative};
use wsnas::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::UnknownArchitecture(_) | Error::NotInSpace(_) => PyKeyError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Undefined(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse(encoding: &str, max_nodes: usize, max_edges: usize) -> PyResult<CellGraph> {
    CellGraph::parse_encoding(encoding).and_then(|g| g.validate_and_prune(max_nodes, max_edges)).map_err(to_py)
}

/// Pruned encoding of a cell, `ops=...;adj=...`.
#[pyfunction]
#[pyo3(signature = (encoding, max_nodes = 7, max_edges = 9))]
fn prune(encoding: &str, max_nodes: usize, max_edges: usize) -> PyResult<String> {
    Ok(parse(encoding, max_nodes, max_edges)?.encoding())
}

/// Isomorphism-invariant hash of the pruned cell as 32 hex digits.
#[pyfunction]
fn canonical_hash(encoding: &str) -> PyResult<String> {
    Ok(parse(encoding, cell::MAX_SUPPORTED_NODES, usize::MAX)?.canonical_hash().to_string())
}

/// Number of unique cells in a named space such as `full@v4e9`.
#[pyfunction]
fn count_unique(space: &str) -> PyResult<usize> {
    let spec = SearchSpaceSpec::parse_name(space).map_err(to_py)?;
    Ok(SearchSpace::build(&spec).len())
}

#[pyfunction]
fn channel_allocation(branches: usize, channels: usize) -> PyResult<Vec<usize>> {
    cell::channel_allocation(branches, channels).map_err(to_py)
}

/// Trainable scalars of the whole network built around the cell.
#[pyfunction]
#[pyo3(signature = (encoding, stem_channels = 16, cell_repeats = 3, num_classes = 4))]
fn param_count(encoding: &str, stem_channels: usize, cell_repeats: usize, num_classes: usize) -> PyResult<usize> {
    let g = parse(encoding, cell::MAX_SUPPORTED_NODES, usize::MAX)?;
    let net = MacroConfig { input_channels: 1, stem_channels, cell_repeats, num_classes };
    cell::param_count(&g, &net).map_err(to_py)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::spearman_rho(&a, &b).map_err(to_py)
}

/// Pooled two-sample t-test of `a - b`.
#[pyfunction]
fn two_sample_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::two_sample_test(&a, &b).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean_diff", r.mean_diff)?;
    d.set_item("ci95", r.ci95)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("cohens_d", r.cohens_d)?;
    d.set_item("t", r.t)?;
    d.set_item("severity", r.severity().label())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (d, alpha = 0.05, power = 0.8, n_other = 500, two_sided = false))]
fn required_sample_size(d: f64, alpha: f64, power: f64, n_other: usize, two_sided: bool) -> PyResult<usize> {
    let alt = if two_sided { Alternative::TwoSided } else { Alternative::OneSided };
    stats::required_sample_size(d, alpha, power, n_other, alt).map_err(to_py)
}

#[pyfunction]
fn superiority_probability(d: f64) -> f64 {
    stats::superiority_probability(d)
}

fn record_dict<'py>(py: Python<'py>, r: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("hash", r.hash.to_string())?;
    d.set_item("ops", &r.ops)?;
    d.set_item("adj", &r.adj)?;
    d.set_item("val_acc_mean", r.val_acc_mean)?;
    d.set_item("val_acc_std", r.val_acc_std)?;
    d.set_item("test_acc_mean", r.test_acc_mean)?;
    d.set_item("test_acc_std", r.test_acc_std)?;
    d.set_item("train_time_s", r.train_time_s)?;
    d.set_item("repeats", r.repeats)?;
    Ok(d)
}

/// A loaded benchmark table.
#[pyclass(name = "BenchTable", module = "wsnas_py")]
struct PyBenchTable {
    inner: BenchTable,
}

#[pymethods]
impl PyBenchTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyBenchTable { inner: BenchTable::load(std::path::Path::new(path)).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint().to_string()
    }

    #[getter]
    fn best_val(&self) -> f64 {
        self.inner.best_val()
    }

    #[getter]
    fn best_test(&self) -> f64 {
        self.inner.best_test()
    }

    fn query<'py>(&self, py: Python<'py>, encoding: &str) -> PyResult<Bound<'py, PyDict>> {
        let g = parse(encoding, cell::MAX_SUPPORTED_NODES, usize::MAX)?;
        record_dict(py, self.inner.query(&g).map_err(to_py)?)
    }

    /// Final regret of a random search over `n` architectures of the table's cells.
    fn random_search_regret(&self, n: usize, seed: u64) -> PyResult<f64> {
        let cells = self.inner.records().iter().map(|r| r.graph()).collect::<wsnas::Result<Vec<_>>>().map_err(to_py)?;
        let max_nodes = cells.iter().map(CellGraph::node_count).max().unwrap_or(2);
        let spec = SearchSpaceSpec::full().with_bounds(max_nodes, usize::MAX);
        let space = SearchSpace::from_members(spec, cells);
        let run = search::random_search(&self.inner, &space, n, seed).map_err(to_py)?;
        Ok(run.regret_curve(self.inner.best_test()).final_regret())
    }
}

#[pymodule]
fn wsnas_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_hash, m)?)?;
    m.add_function(wrap_pyfunction!(count_unique, m)?)?;
    m.add_function(wrap_pyfunction!(channel_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(two_sample_test, m)?)?;
    m.add_function(wrap_pyfunction!(required_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(superiority_probability, m)?)?;
    m.add_class::<PyBenchTable>()?;
    Ok(())
}
