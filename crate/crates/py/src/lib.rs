//! Python bindings for the fracrfk core library.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fracrfk::geometry::{make_mask, DomainMask, GridSpec, Shape};
use fracrfk::shape_opt::{optimize_fixed_measure, optimize_penalized, OptimizeOptions, ShapeState};
use fracrfk::spectral::smallest_eigenpair;
use fracrfk::{hardy, rearrangement, special, Error, RegionalForm};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NotConverged { .. } | Error::NearFieldQuadrature { .. } | Error::Quadrature(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Uniform grid on the cube `[lo, hi]^dim`.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(dim: usize, cells: usize, lo: f64, hi: f64) -> PyResult<Self> {
        GridSpec::cube(dim, cells, lo, hi).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.0.num_cells()
    }
}

/// Set of active grid cells.
#[pyclass(name = "Mask", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMask(DomainMask);

#[pymethods]
impl PyMask {
    #[staticmethod]
    fn ball(grid: &PyGrid, center: Vec<f64>, radius: f64) -> PyResult<Self> {
        make_mask(&grid.0, &Shape::Ball { center, radius }).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(name = "box")]
    fn box_(grid: &PyGrid, lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        make_mask(&grid.0, &Shape::Box { lo, hi }).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn annulus(grid: &PyGrid, center: Vec<f64>, r_in: f64, r_out: f64) -> PyResult<Self> {
        make_mask(&grid.0, &Shape::Annulus { center, r_in, r_out }).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_flags(grid: &PyGrid, flags: Vec<bool>) -> PyResult<Self> {
        DomainMask::from_flags(grid.0.clone(), flags).map(Self).map_err(py_err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    #[getter]
    fn flags(&self) -> Vec<bool> {
        self.0.flags().to_vec()
    }

    #[getter]
    fn active_count(&self) -> usize {
        self.0.active_count()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn components(&self) -> Vec<Vec<usize>> {
        self.0.components()
    }

    fn rescaled(&self, t: f64) -> PyResult<Self> {
        self.0.rescaled(t).map(Self).map_err(py_err)
    }
}

/// First eigenpair of the regional operator.
#[pyclass(name = "EigenPair", frozen, get_all)]
struct PyEigenPair {
    #[pyo3(name = "lambda_")]
    lambda: f64,
    u: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

/// Assembled regional form of a mask.
#[pyclass(name = "Form", frozen)]
struct PyForm(RegionalForm);

#[pymethods]
impl PyForm {
    #[new]
    fn new(mask: &PyMask, sigma: f64) -> PyResult<Self> {
        RegionalForm::new(&mask.0, sigma).map(Self).map_err(py_err)
    }

    #[getter]
    fn num_dofs(&self) -> usize {
        self.0.num_dofs()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    fn energy(&self, u: Vec<f64>) -> PyResult<f64> {
        self.0.energy(&u).map_err(py_err)
    }

    fn full_space_form(&self, u: Vec<f64>) -> PyResult<f64> {
        self.0.full_space_form(&u).map_err(py_err)
    }

    fn complement_term(&self, u: Vec<f64>) -> PyResult<f64> {
        self.0.complement_term(&u).map_err(py_err)
    }

    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.apply(&u).map_err(py_err)
    }

    fn kappa(&self) -> Vec<f64> {
        self.0.kappa()
    }

    fn node_weights(&self) -> Vec<f64> {
        self.0.node_weights()
    }

    /// Physical coordinates of the degrees of freedom.
    fn dof_positions(&self) -> Vec<Vec<f64>> {
        let dim = self.0.dim();
        self.0.dof_positions().iter().map(|p| p[..dim].to_vec()).collect()
    }

    #[pyo3(signature = (tol = 1e-9, max_iter = 5000, seed = 0))]
    fn eigen(&self, py: Python<'_>, tol: f64, max_iter: usize, seed: u64) -> PyResult<PyEigenPair> {
        let r = py.detach(|| smallest_eigenpair(&self.0, tol, max_iter, seed)).map_err(py_err)?;
        Ok(PyEigenPair { lambda: r.lambda, u: r.u, residual: r.residual, iterations: r.iterations, converged: r.converged })
    }

    fn rearrange(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        rearrangement::symmetric_decreasing_rearrangement(&self.0, &u).map_err(py_err)
    }

    /// Regional and full-space forms of `u` and of its rearrangement.
    fn compare_rearrangement<'py>(&self, py: Python<'py>, u: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let r = rearrangement::compare(&self.0, &u).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("regional_u", r.regional_u)?;
        d.set_item("regional_star", r.regional_star)?;
        d.set_item("full_u", r.full_u)?;
        d.set_item("full_star", r.full_star)?;
        d.set_item("full_margin", r.full_margin)?;
        Ok(d)
    }

    /// Regional and full-space forms of `u` against the equivalence constant.
    fn equivalence<'py>(&self, py: Python<'py>, u: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let r = hardy::equivalence_check(&self.0, &u).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("regional", r.regional)?;
        d.set_item("full", r.full)?;
        d.set_item("ratio", r.ratio)?;
        d.set_item("c_star", r.c_star)?;
        Ok(d)
    }
}

#[pyfunction]
fn gamma(x: f64) -> PyResult<f64> {
    special::gamma(x).map_err(py_err)
}

#[pyfunction]
fn tail_integral(n: usize, sigma: f64, radius: f64) -> PyResult<f64> {
    special::tail_integral(n, sigma, radius).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (n, sigma, p = 2.0))]
fn hardy_constant(n: usize, sigma: f64, p: f64) -> PyResult<f64> {
    special::hardy_constant(n, p, sigma).map(|c| c.value).map_err(py_err)
}

#[pyfunction]
fn equivalence_constant(n: usize, sigma: f64) -> PyResult<f64> {
    hardy::equivalence_constant(n, sigma).map_err(py_err)
}

fn state_dict<'py>(py: Python<'py>, st: ShapeState) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mask", PyMask(st.mask))?;
    d.set_item("lambda_", st.eigen.lambda)?;
    d.set_item("u", st.eigen.u)?;
    d.set_item("volume", st.volume)?;
    d.set_item("energy_penalized", st.energy_penalized)?;
    d.set_item("iterations", st.iteration)?;
    d.set_item("lambda_history", st.history.iter().map(|h| h.lambda).collect::<Vec<_>>())?;
    Ok(d)
}

/// Shape optimization from `init`: mode is "fixed", "convex" or "penalized".
#[pyfunction]
#[pyo3(signature = (init, sigma, mode = "fixed", penalty = 1.0, max_iter = 30, seed = 0))]
fn optimize<'py>(
    py: Python<'py>,
    init: &PyMask,
    sigma: f64,
    mode: &str,
    penalty: f64,
    max_iter: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut opts = OptimizeOptions { max_iter, ..OptimizeOptions::default() };
    opts.eigen.seed = seed;
    let init = init.0.clone();
    let st = match mode {
        "fixed" | "convex" => {
            opts.convex = mode == "convex";
            py.detach(|| optimize_fixed_measure(sigma, init.volume(), &init, &opts))
        }
        "penalized" => py.detach(|| optimize_penalized(sigma, penalty, &init, &opts).map(|r| r.state)),
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
    .map_err(py_err)?;
    state_dict(py, st)
}

#[pymodule]
fn fracrfk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyForm>()?;
    m.add_class::<PyEigenPair>()?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(tail_integral, m)?)?;
    m.add_function(wrap_pyfunction!(hardy_constant, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_constant, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
