//! Python bindings: expressions, templates, dataset collections, fitting,
//! the L2 score and the GP search.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ::eqsearch::data::{self, DatasetCollection, ExponentialSpec, ProjectileSpec, Provenance};
use ::eqsearch::expr;
use ::eqsearch::fit::{self, FitOptions, NormStats};
use ::eqsearch::gp::{self, GpConfig};
use ::eqsearch::lmetric::{self, L2Options};
use ::eqsearch::transform;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Expression", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyExpression(expr::Expression);

#[pymethods]
impl PyExpression {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        expr::parse(text).map(Self).map_err(value_error)
    }

    fn evaluate(&self, x: f64, theta: Vec<f64>) -> PyResult<f64> {
        self.0.evaluate(x, &theta).map_err(value_error)
    }

    fn simplify(&self) -> Self {
        Self(expr::simplify(&self.0))
    }

    fn canonical(&self) -> String {
        self.0.canonical_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.depth()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expression('{}')", self.0)
    }
}

#[pyclass(name = "Template", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTemplate(transform::Template);

#[pymethods]
impl PyTemplate {
    /// Parses a template with slots `t0..`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        transform::Template::parse(text).map(Self).map_err(value_error)
    }

    /// Dimensionalizes a raw expression such as `"x^2 + exp(x)"`.
    #[staticmethod]
    fn dimensionalize(text: &str) -> PyResult<Self> {
        let e = expr::parse(text).map_err(value_error)?;
        transform::dimensionalize(&e).map(Self).map_err(value_error)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn roles(&self) -> Vec<&'static str> {
        self.0.roles().iter().map(|r| r.name()).collect()
    }

    fn evaluate(&self, x: f64, theta: Vec<f64>) -> PyResult<f64> {
        self.0.evaluate(x, &theta).map_err(value_error)
    }

    /// Maps parameters fitted on min-max normalized data back to raw units.
    fn unnormalize(&self, theta: Vec<f64>, x_min: f64, x_range: f64, y_min: f64, y_range: f64) -> PyResult<Vec<f64>> {
        let stats = NormStats { x_min, x_range, y_min, y_range, x_degenerate: false, y_degenerate: false };
        transform::unnormalize_params(&self.0, &theta, &stats).map_err(value_error)
    }

    fn canonical(&self) -> String {
        self.0.canonical_string()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Template('{}')", self.0)
    }
}

#[pyclass(name = "Datasets", frozen)]
struct PyDatasets(DatasetCollection);

#[pymethods]
impl PyDatasets {
    /// Builds a collection from `{system_id: (xs, ys)}`.
    #[new]
    fn new(systems: BTreeMap<String, (Vec<f64>, Vec<f64>)>) -> PyResult<Self> {
        let datasets = systems
            .into_iter()
            .map(|(id, (xs, ys))| {
                if xs.len() != ys.len() {
                    return Err(value_error(format!("{id}: xs and ys differ in length")));
                }
                data::Dataset::new(id, xs.into_iter().zip(ys).collect()).map_err(value_error)
            })
            .collect::<PyResult<Vec<_>>>()?;
        DatasetCollection::new(datasets, Provenance::InMemory).map(Self).map_err(value_error)
    }

    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        data::load_csv(path).map(Self).map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (g_values, seed, launch_angle_deg = 40.0, n_points = 50, x_max_fraction = 0.8, noise_sd = 0.0))]
    fn projectile(
        g_values: Vec<f64>,
        seed: u64,
        launch_angle_deg: f64,
        n_points: usize,
        x_max_fraction: f64,
        noise_sd: f64,
    ) -> PyResult<Self> {
        let spec = ProjectileSpec { g_values, launch_angle_deg, n_points, x_max_fraction, noise_sd, ..Default::default() };
        spec.generate(seed).map(Self).map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (n_systems, seed, cycles = 150, noise_sd = 0.01))]
    fn exponential(n_systems: usize, seed: u64, cycles: usize, noise_sd: f64) -> PyResult<Self> {
        let spec = ExponentialSpec { n_systems, cycles, noise_sd, ..Default::default() };
        data::gen_exponential(&spec, seed).map(Self).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn system_ids(&self) -> Vec<String> {
        self.0.iter().map(|d| d.system_id().to_owned()).collect()
    }

    /// `(xs, ys)` of one system.
    fn points(&self, system_id: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let d = self.0.iter().find(|d| d.system_id() == system_id).ok_or_else(|| value_error(format!("no system {system_id}")))?;
        Ok((d.xs().to_vec(), d.ys().to_vec()))
    }

    /// Intrinsic annotations, `{system_id: {name: value}}`.
    fn annotations(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.0.iter().map(|d| (d.system_id().to_owned(), d.annotations().clone())).collect()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv_string()
    }
}

#[pyclass(name = "FitResult", frozen, get_all)]
struct PyFitResult {
    theta_matrix: Vec<Vec<f64>>,
    per_dataset_l1: Vec<f64>,
    mean_l1: f64,
    methods: Vec<&'static str>,
}

impl From<fit::FitResult> for PyFitResult {
    fn from(r: fit::FitResult) -> Self {
        Self {
            methods: r.methods.iter().map(|m| m.name()).collect(),
            theta_matrix: r.theta_matrix,
            per_dataset_l1: r.per_dataset_l1,
            mean_l1: r.mean_l1,
        }
    }
}

/// Fits the template to every system; parameters come back in raw units.
#[pyfunction]
#[pyo3(signature = (template, datasets, seed, use_pso = true))]
fn fit_all(py: Python<'_>, template: &PyTemplate, datasets: &PyDatasets, seed: u64, use_pso: bool) -> PyFitResult {
    let options = FitOptions { use_pso, ..FitOptions::default() };
    py.detach(|| fit::fit_all(&template.0, &datasets.0, seed, &options)).into()
}

/// Per-slot test mse of predicting each parameter from the earlier ones.
/// Returns `(contributions, l2_total)`.
#[pyfunction]
#[pyo3(signature = (theta_matrix, seed, split_ratio = 0.7))]
fn l2_score(theta_matrix: Vec<Vec<f64>>, seed: u64, split_ratio: f64) -> PyResult<(Vec<f64>, f64)> {
    let options = L2Options { split_ratio, ..L2Options::default() };
    let report = lmetric::l2_score(&theta_matrix, &options, seed).map_err(value_error)?;
    Ok((report.contributions, report.l2_total))
}

/// GP search; returns `(canonical template, T, mean L1)` for every fitted
/// candidate, best first.
#[pyfunction]
#[pyo3(signature = (datasets, seed, population_size = 200, generations = 30, max_depth = 6))]
fn search(
    py: Python<'_>,
    datasets: &PyDatasets,
    seed: u64,
    population_size: usize,
    generations: usize,
    max_depth: usize,
) -> PyResult<Vec<(String, usize, f64)>> {
    let config = GpConfig { population_size, generations, max_depth, seed, ..GpConfig::default() };
    let fit_options = ::eqsearch::cli::default_search_fit();
    let outcome = py.detach(|| gp::evolve(&datasets.0, &config, &fit_options, |_| {})).map_err(value_error)?;
    Ok(outcome.leaderboard.iter().map(|r| (r.canonical.clone(), r.param_count(), r.mean_l1())).collect())
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(value_error("spearman needs two equal-length sequences of at least 2 values"));
    }
    Ok(data::spearman(&a, &b))
}

#[pymodule]
#[pyo3(name = "eqsearch")]
fn eqsearch_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpression>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyDatasets>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit_all, m)?)?;
    m.add_function(wrap_pyfunction!(l2_score, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    Ok(())
}
