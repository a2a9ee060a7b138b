//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ist_core::experiments::{self, ExperimentConfig};
use ist_core::{kernels, manifold, oracles, second_order, Error, Mat};

type Rows = Vec<Vec<f64>>;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_mat(rows: &Rows) -> PyResult<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_metric(name: &str) -> PyResult<manifold::Metric> {
    match name {
        "g1" => Ok(manifold::Metric::Canonical1),
        "g2" => Ok(manifold::Metric::Canonical2),
        other => Err(PyValueError::new_err(format!("unknown metric '{other}' (expected g1 or g2)"))),
    }
}

/// Indefinite Stiefel manifold `{X : XᵀAX = J}` with one of the canonical metrics.
#[pyclass(name = "ManifoldSpec", frozen)]
struct PyManifoldSpec {
    inner: Arc<manifold::ManifoldSpec>,
}

#[pymethods]
impl PyManifoldSpec {
    #[new]
    #[pyo3(signature = (a, j, metric = "g1", rho = 1.0))]
    fn new(a: Rows, j: Rows, metric: &str, rho: f64) -> PyResult<Self> {
        let spec = manifold::ManifoldSpec::new(to_mat(&a)?, to_mat(&j)?, parse_metric(metric)?, rho)
            .map_err(to_py_err)?;
        Ok(PyManifoldSpec { inner: Arc::new(spec) })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn metric(&self) -> &'static str {
        self.inner.metric().name()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }

    fn random_point(&self, seed: u64) -> PyResult<PyPoint> {
        let ws = manifold::random_point(&self.inner, seed).map_err(to_py_err)?;
        Ok(PyPoint { inner: ws })
    }

    fn point(&self, x: Rows) -> PyResult<PyPoint> {
        let ws = manifold::PointWorkspace::new(self.inner.clone(), to_mat(&x)?).map_err(to_py_err)?;
        Ok(PyPoint { inner: ws })
    }

    fn __repr__(&self) -> String {
        format!(
            "ManifoldSpec(n={}, p={}, metric='{}', rho={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.metric().name(),
            self.inner.rho()
        )
    }
}

/// A feasible point. Tangent vectors are passed as plain matrices and
/// checked for tangency on entry.
#[pyclass(name = "Point", frozen)]
struct PyPoint {
    inner: manifold::PointWorkspace,
}

impl PyPoint {
    fn tangent(&self, xi: &Rows) -> PyResult<manifold::TangentVector> {
        self.inner.tangent(to_mat(xi)?).map_err(to_py_err)
    }
}

#[pymethods]
impl PyPoint {
    #[getter]
    fn x(&self) -> Rows {
        to_rows(self.inner.x())
    }

    fn feasibility_residual(&self) -> f64 {
        self.inner.feasibility_residual()
    }

    fn metric_apply(&self, v: Rows) -> PyResult<Rows> {
        Ok(to_rows(&self.inner.metric_apply(&to_mat(&v)?).map_err(to_py_err)?))
    }

    fn metric_inverse_apply(&self, v: Rows) -> PyResult<Rows> {
        Ok(to_rows(&self.inner.metric_inverse_apply(&to_mat(&v)?).map_err(to_py_err)?))
    }

    fn project(&self, y: Rows) -> PyResult<Rows> {
        Ok(to_rows(self.inner.project(&to_mat(&y)?).map_err(to_py_err)?.mat()))
    }

    fn random_tangent(&self, seed: u64) -> Rows {
        to_rows(self.inner.random_tangent(seed).mat())
    }

    fn inner_product(&self, xi: Rows, eta: Rows) -> PyResult<f64> {
        self.inner
            .inner(&self.tangent(&xi)?, &self.tangent(&eta)?)
            .map_err(to_py_err)
    }

    fn tangency_defect(&self, xi: Rows) -> PyResult<f64> {
        Ok(self.inner.tangency_defect(&to_mat(&xi)?))
    }

    fn retract(&self, xi: Rows) -> PyResult<PyPoint> {
        let next = self.inner.retract(&self.tangent(&xi)?).map_err(to_py_err)?;
        Ok(PyPoint { inner: next })
    }

    fn riemannian_gradient(&self, egrad: Rows) -> PyResult<Rows> {
        let g = second_order::riemannian_gradient(&self.inner, &to_mat(&egrad)?).map_err(to_py_err)?;
        Ok(to_rows(g.mat()))
    }

    /// Riemannian Hessian of `tr(XᵀMX)` applied to `xi`.
    fn trace_hessian(&self, m: Rows, xi: Rows) -> PyResult<Rows> {
        let objective = experiments::TraceObjective::new(to_mat(&m)?).map_err(to_py_err)?;
        let derivs = second_order::EuclideanDerivatives::from_objective(&objective, self.inner.x());
        let h = second_order::riemannian_hessian_apply(&self.inner, &derivs, &self.tangent(&xi)?)
            .map_err(to_py_err)?;
        Ok(to_rows(h.mat()))
    }
}

#[pyfunction]
fn sym_eig(s: Rows) -> PyResult<(Vec<f64>, Rows)> {
    let e = kernels::sym_eig(&to_mat(&s)?).map_err(to_py_err)?;
    Ok((e.eigenvalues.iter().copied().collect(), to_rows(&e.eigenvectors)))
}

#[pyfunction]
fn mat_exp(s: Rows) -> PyResult<Rows> {
    Ok(to_rows(&kernels::mat_exp(&to_mat(&s)?).map_err(to_py_err)?))
}

#[pyfunction]
fn solve_lyapunov(s: Rows, r: Rows) -> PyResult<Rows> {
    Ok(to_rows(&kernels::solve_lyapunov(&to_mat(&s)?, &to_mat(&r)?).map_err(to_py_err)?))
}

#[pyfunction]
fn generalized_eigenvalues(m: Rows, a: Rows) -> PyResult<Vec<f64>> {
    let pairs = oracles::dense_generalized_eig(&to_mat(&m)?, &to_mat(&a)?).map_err(to_py_err)?;
    Ok(pairs.iter().map(|p| p.lambda).collect())
}

/// Runs one benchmark experiment. Keyword arguments use the CLI flag names
/// with `_` in place of `-` (for example `outer_tol=1e-10`).
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn run_experiment<'py>(py: Python<'py>, kwargs: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig {
        out_dir: PathBuf::from("out"),
        ..ExperimentConfig::default()
    };
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            cfg.set(&key, &value).map_err(to_py_err)?;
        }
    }
    let outcome = py.detach(|| experiments::run_experiment(&cfg)).map_err(to_py_err)?;
    let out = PyDict::new(py);
    let last = outcome.trace.last();
    out.set_item("status", outcome.trace.status.name())?;
    out.set_item("iterations", last.index)?;
    out.set_item("f", last.f)?;
    out.set_item("gradnorm", last.gradnorm)?;
    out.set_item("newton_steps", outcome.trace.newton_steps())?;
    out.set_item("switch_iter", outcome.trace.switch_iter)?;
    out.set_item("csv", outcome.csv_path.display().to_string())?;
    out.set_item("stationarity", outcome.stationarity)?;
    out.set_item(
        "gradnorms",
        outcome.trace.records.iter().map(|r| r.gradnorm).collect::<Vec<_>>(),
    )?;
    out.set_item("x", to_rows(outcome.trace.final_point.x()))?;
    Ok(out)
}

/// Oracle verification table as `(name, value, tolerance, passed)` tuples.
#[pyfunction]
#[pyo3(signature = (seed = 42))]
fn verify(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let checks = py.detach(|| experiments::verify_suite(seed)).map_err(to_py_err)?;
    Ok(checks
        .into_iter()
        .map(|c| (c.name, c.value, c.tolerance, c.passed))
        .collect())
}

#[pymodule]
pub fn ist_opt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifoldSpec>()?;
    m.add_class::<PyPoint>()?;
    m.add_function(wrap_pyfunction!(sym_eig, m)?)?;
    m.add_function(wrap_pyfunction!(mat_exp, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(generalized_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
