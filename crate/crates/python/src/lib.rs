//! Python bindings for the `c3dr` crate.

use c3dr::c3solver::{lower_conf_limit as lcl, PathConfig};
use c3dr::cancor;
use c3dr::data::{load_csv as load, Dataset as CoreDataset};
use c3dr::moments::{standardize, DEFAULT_RANK_TOL};
use c3dr::pipeline::{run_pipeline, PipelineConfig, PipelineResult};
use c3dr::simharness::{generate as gen, run_study, StudyConfig, StudySpec};
use c3dr::splines::{make_basis, KnotPlacement, SplineBasis as CoreBasis, SplineConfig};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(c3py, C3Error, PyValueError);

fn err(e: c3dr::C3Error) -> PyErr {
    C3Error::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(C3Error::new_err("rows of x have different lengths"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Converts a serializable value into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| C3Error::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A clamped B-spline basis fitted to response values.
#[pyclass(frozen, module = "c3py")]
struct SplineBasis {
    inner: CoreBasis,
}

#[pymethods]
impl SplineBasis {
    #[new]
    #[pyo3(signature = (y, order = 3, knots = 4, uniform = false))]
    fn new(y: Vec<f64>, order: usize, knots: usize, uniform: bool) -> PyResult<Self> {
        let placement = if uniform { KnotPlacement::Uniform } else { KnotPlacement::Quantile };
        let config = SplineConfig::new(order, knots).with_placement(placement);
        Ok(Self {
            inner: make_basis(&y, &config).map_err(err)?,
        })
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.inner.knots().to_vec()
    }

    #[getter]
    fn num_retained(&self) -> usize {
        self.inner.num_retained()
    }

    /// Retained basis values at `v`.
    fn evaluate(&self, v: f64) -> Vec<f64> {
        self.inner.evaluate_pi(v)
    }

    /// All basis values at `v`; they sum to one inside the range.
    fn evaluate_full(&self, v: f64) -> Vec<f64> {
        self.inner.evaluate_full(v)
    }

    fn design_matrix(&self, y: Vec<f64>) -> Vec<Vec<f64>> {
        to_rows(&self.inner.design_matrix(&y))
    }
}

/// Response, named predictors and the predictor matrix (rows).
#[pyclass(frozen, module = "c3py")]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (x, y, names = None, response = "y".to_string()))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, names: Option<Vec<String>>, response: String) -> PyResult<Self> {
        let m = to_matrix(&x)?;
        let names = names.unwrap_or_else(|| (1..=m.ncols()).map(|j| format!("x{j}")).collect());
        Ok(Self {
            inner: CoreDataset::new(response, y, names, m).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, response = None))]
    fn load_csv(path: &str, response: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: load(path, response).map_err(err)?,
        })
    }

    /// Replicate `replicate` of simulation study `study`.
    #[staticmethod]
    #[pyo3(signature = (study, n = 120, seed = 1, replicate = 0))]
    fn generate(study: u8, n: usize, seed: u64, replicate: u64) -> PyResult<Self> {
        let spec = StudySpec::new(study, n, 1, seed).map_err(err)?;
        Ok(Self {
            inner: gen(&spec, replicate),
        })
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.x)
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn response(&self) -> String {
        self.inner.response_name.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, response={:?})", self.inner.n(), self.inner.p(), self.inner.response_name)
    }
}

/// Pipeline settings; `k=None` estimates the number of directions.
#[pyclass(module = "c3py")]
struct C3Model {
    config: PipelineConfig,
}

#[pymethods]
impl C3Model {
    #[new]
    #[pyo3(signature = (order = 3, knots = 4, alpha = 0.005, dt = 0.05, level = 0.05, k = None))]
    fn new(order: usize, knots: usize, alpha: f64, dt: f64, level: f64, k: Option<usize>) -> Self {
        Self {
            config: PipelineConfig {
                order,
                internal_knots: knots,
                path: PathConfig {
                    alpha_level: alpha,
                    delta_t: dt,
                    ..PathConfig::default()
                },
                test_level: level,
                k,
                rank_tol: DEFAULT_RANK_TOL,
            },
        }
    }

    fn fit(&self, data: &Dataset) -> PyResult<FitResult> {
        let result = run_pipeline(&data.inner, &self.config).map_err(err)?;
        Ok(FitResult {
            names: data.inner.names.clone(),
            result,
        })
    }
}

#[pyclass(frozen, module = "c3py")]
struct FitResult {
    names: Vec<String>,
    result: PipelineResult,
}

#[pymethods]
impl FitResult {
    /// Unconstrained canonical correlations.
    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.result.cancor.gamma.clone()
    }

    #[getter]
    fn k_hat(&self) -> Option<usize> {
        self.result.cancor.k_hat
    }

    #[getter]
    fn k(&self) -> usize {
        self.result.k
    }

    #[getter]
    fn t_selected(&self) -> Vec<f64> {
        self.result.constrained.iter().map(|d| d.t_selected).collect()
    }

    #[getter]
    fn gamma_constrained(&self) -> Vec<f64> {
        self.result.constrained.iter().map(|d| d.gamma).collect()
    }

    /// Selected variable names per direction.
    #[getter]
    fn supports(&self) -> Vec<Vec<String>> {
        self.result
            .final_fit
            .as_ref()
            .map(|f| {
                f.directions
                    .iter()
                    .map(|d| d.support.iter().map(|&j| self.names[j].clone()).collect())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Final directions, unit Euclidean norm, one list per direction.
    #[getter]
    fn directions(&self) -> Vec<Vec<f64>> {
        self.result
            .final_fit
            .as_ref()
            .map(|f| f.directions.iter().map(|d| d.reported.clone()).collect())
            .unwrap_or_default()
    }

    /// The full final fit (directions, filter traces, re-estimation).
    fn final_fit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.result.final_fit)
    }

    /// The L1 path trace of each direction.
    fn paths<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.result.paths)
    }

    fn __repr__(&self) -> String {
        format!("FitResult(k={}, supports={:?})", self.result.k, self.supports())
    }
}

/// Unconstrained CANCOR between standardized `x` and the spline basis of `y`.
#[pyfunction]
#[pyo3(signature = (x, y, order = 3, knots = 4, level = 0.05))]
fn cancor_fit<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    order: usize,
    knots: usize,
    level: f64,
) -> PyResult<Bound<'py, PyAny>> {
    #[derive(Serialize)]
    struct Out {
        gamma: Vec<f64>,
        beta: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
        k_hat: Option<usize>,
        tests: Vec<cancor::DimTestRecord>,
    }
    let m = to_matrix(&x)?;
    let names: Vec<String> = (1..=m.ncols()).map(|j| format!("x{j}")).collect();
    let xs = standardize(&m, &names).map_err(err)?;
    let basis = make_basis(&y, &SplineConfig::new(order, knots)).map_err(err)?.design_matrix(&y);
    let fit = cancor::fit(&xs, &basis, DEFAULT_RANK_TOL).map_err(err)?.with_dimension_test(level);
    to_py(
        py,
        &Out {
            beta: to_columns(&fit.beta),
            alpha: to_columns(&fit.alpha),
            gamma: fit.gamma,
            k_hat: fit.k_hat,
            tests: fit.test_trace,
        },
    )
}

/// Fisher-transform lower confidence limit of a canonical correlation.
#[pyfunction]
#[pyo3(signature = (gamma, n, alpha = 0.005))]
fn lower_conf_limit(gamma: f64, n: usize, alpha: f64) -> PyResult<f64> {
    lcl(gamma, n, alpha).map_err(err)
}

/// Runs a simulation study and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (study, n = 120, reps = 100, seed = 1, estimate_k = false, alpha = 0.005, dt = 0.05))]
fn simulate<'py>(
    py: Python<'py>,
    study: u8,
    n: usize,
    reps: usize,
    seed: u64,
    estimate_k: bool,
    alpha: f64,
    dt: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = StudySpec::new(study, n, reps, seed).map_err(err)?;
    let mut config = StudyConfig {
        estimate_k,
        ..StudyConfig::default()
    };
    config.pipeline.path.alpha_level = alpha;
    config.pipeline.path.delta_t = dt;
    let report = py.detach(|| run_study(&spec, &config)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
pub fn c3py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("C3Error", m.py().get_type::<C3Error>())?;
    m.add_class::<SplineBasis>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<C3Model>()?;
    m.add_class::<FitResult>()?;
    m.add_function(wrap_pyfunction!(cancor_fit, m)?)?;
    m.add_function(wrap_pyfunction!(lower_conf_limit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
