//! Python bindings. Fields cross the boundary as flat lists in row-major
//! order (x index fastest), matching the snapshot layout.

// pyo3 0.22 method wrappers trip this lint on every `map_err`.
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use chdf_core::config::{self, RunConfig};
use chdf_core::diagnostics::{self, StationarySettings};
use chdf_core::step::{self, ChemicalPotentials, StepReport};
use chdf_core::{darcy, driver, model};
use chdf_core::{Error, Grid2D, ScalarField, SolverTolerances, State, VectorField};
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::UnknownPreset(_)
        | Error::GridMismatch(_)
        | Error::SnapshotFormat(_)
        | Error::MeanNotZero { .. }
        | Error::OutOfDomain { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Grid", module = "chdf", frozen)]
#[derive(Clone)]
struct PyGrid(Grid2D);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> PyResult<Self> {
        Grid2D::new(nx, ny, lx, ly).map(PyGrid).map_err(to_py)
    }
    #[getter]
    fn nx(&self) -> usize {
        self.0.nx()
    }
    #[getter]
    fn ny(&self) -> usize {
        self.0.ny()
    }
    #[getter]
    fn lx(&self) -> f64 {
        self.0.lx()
    }
    #[getter]
    fn ly(&self) -> f64 {
        self.0.ly()
    }
    fn x_centers(&self) -> Vec<f64> {
        (0..self.0.nx()).map(|i| self.0.x_center(i)).collect()
    }
    fn y_centers(&self) -> Vec<f64> {
        (0..self.0.ny()).map(|j| self.0.y_center(j)).collect()
    }
    fn __repr__(&self) -> String {
        format!("Grid(nx={}, ny={}, lx={}, ly={})", self.0.nx(), self.0.ny(), self.0.lx(), self.0.ly())
    }
}

#[pyclass(name = "Field", module = "chdf")]
#[derive(Clone)]
struct PyField(ScalarField);

#[pymethods]
impl PyField {
    #[new]
    fn new(grid: &PyGrid, values: Vec<f64>) -> PyResult<Self> {
        ScalarField::new(&grid.0, values).map(PyField).map_err(to_py)
    }
    #[staticmethod]
    fn constant(grid: &PyGrid, value: f64) -> Self {
        PyField(ScalarField::constant(&grid.0, value))
    }
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }
    fn __len__(&self) -> usize {
        self.0.values().len()
    }
    fn mean(&self) -> f64 {
        self.0.mean()
    }
    fn integral(&self) -> f64 {
        self.0.integral()
    }
    fn min(&self) -> f64 {
        self.0.min()
    }
    fn max(&self) -> f64 {
        self.0.max()
    }
    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }
    /// `-Laplace f` with homogeneous Neumann conditions.
    fn neumann_operator(&self) -> Self {
        PyField(self.0.neumann_laplacian())
    }
    /// Zero-mean inverse of `neumann_operator`; requires a zero-mean field.
    fn inverse_neumann_operator(&self) -> PyResult<Self> {
        self.0.inverse_neumann_laplacian().map(PyField).map_err(to_py)
    }
    fn hminus1_norm_sq(&self) -> PyResult<f64> {
        self.0.hminus1_norm_sq().map_err(to_py)
    }
    fn gradient(&self) -> (Self, Self) {
        let g = self.0.gradient();
        (PyField(g.x), PyField(g.y))
    }
}

#[pyclass(name = "ModelParams", module = "chdf")]
#[derive(Clone)]
struct PyParams(model::ModelParams);

fn param_slot<'a>(p: &'a mut model::ModelParams, key: &str) -> PyResult<&'a mut f64> {
    Ok(match key {
        "alpha" => &mut p.alpha,
        "beta" => &mut p.beta,
        "sigma1" => &mut p.sigma1,
        "sigma2" => &mut p.sigma2,
        "c" => &mut p.c,
        "r" => &mut p.r,
        "theta_phi" => &mut p.theta_phi,
        "theta_psi" => &mut p.theta_psi,
        "theta_c" => &mut p.theta_c,
        "w" => &mut p.w,
        "nu" => &mut p.nu,
        "eta" => &mut p.eta,
        "m_phi" => &mut p.m_phi,
        "m_psi" => &mut p.m_psi,
        _ => return Err(PyKeyError::new_err(format!("unknown parameter `{key}`"))),
    })
}

impl PyParams {
    fn checked(&self) -> PyResult<&model::ModelParams> {
        self.0.validate().map_err(to_py)?;
        Ok(&self.0)
    }
}

#[pymethods]
impl PyParams {
    /// Keyword arguments override the defaults; the result is validated.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut p = model::ModelParams::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                *param_slot(&mut p, &k.extract::<String>()?)? = v.extract()?;
            }
        }
        p.validate().map_err(to_py)?;
        Ok(PyParams(p))
    }
    fn get(&mut self, key: &str) -> PyResult<f64> {
        Ok(*param_slot(&mut self.0, key)?)
    }
    /// Returns a copy with one parameter changed.
    fn with_value(&self, key: &str, value: f64) -> PyResult<Self> {
        let mut p = self.0.clone();
        *param_slot(&mut p, key)? = value;
        p.validate().map_err(to_py)?;
        Ok(PyParams(p))
    }
    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "State", module = "chdf")]
#[derive(Clone)]
struct PyState {
    inner: State,
    warm: Option<ChemicalPotentials>,
}

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (phi, psi, ux=None, uy=None, time=0.0))]
    fn new(phi: &PyField, psi: &PyField, ux: Option<&PyField>, uy: Option<&PyField>, time: f64) -> PyResult<Self> {
        let grid = phi.0.grid();
        let pick = |f: Option<&PyField>| f.map_or_else(|| ScalarField::zeros(grid), |f| f.0.clone());
        let u = VectorField::new(pick(ux), pick(uy)).map_err(to_py)?;
        let inner = State {
            u,
            phi: phi.0.clone(),
            psi: psi.0.clone(),
            time,
            step_index: 0,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyState { inner, warm: None })
    }
    #[staticmethod]
    fn homogeneous(grid: &PyGrid, phi: f64, psi: f64) -> PyResult<Self> {
        let inner = State::homogeneous(&grid.0, phi, psi);
        inner.validate().map_err(to_py)?;
        Ok(PyState { inner, warm: None })
    }
    #[getter]
    fn phi(&self) -> PyField {
        PyField(self.inner.phi.clone())
    }
    #[getter]
    fn psi(&self) -> PyField {
        PyField(self.inner.psi.clone())
    }
    #[getter]
    fn ux(&self) -> PyField {
        PyField(self.inner.u.x.clone())
    }
    #[getter]
    fn uy(&self) -> PyField {
        PyField(self.inner.u.y.clone())
    }
    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }
    #[getter]
    fn step_index(&self) -> u64 {
        self.inner.step_index
    }
    fn energy(&self, params: &PyParams) -> PyResult<f64> {
        model::total_energy(&self.inner, params.checked()?).map_err(to_py)
    }
}

fn report_dict<'py>(py: Python<'py>, r: &StepReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("picard_iterations", r.picard_iterations)?;
    d.set_item("newton_iterations_phi", r.newton_iterations_phi)?;
    d.set_item("newton_iterations_psi", r.newton_iterations_psi)?;
    d.set_item("energy_before", r.energy_before)?;
    d.set_item("energy_after", r.energy_after)?;
    d.set_item("dissipation_h", r.dissipation_h)?;
    d.set_item("inequality_slack", r.inequality_slack)?;
    d.set_item("mass_phi", r.mass_achieved_phi)?;
    d.set_item("mass_psi", r.mass_achieved_psi)?;
    d.set_item("min_phi", r.min_phi)?;
    d.set_item("max_phi", r.max_phi)?;
    d.set_item("min_psi", r.min_psi)?;
    d.set_item("max_psi", r.max_psi)?;
    d.set_item("halvings", r.halvings)?;
    d.set_item("substeps", r.substeps)?;
    Ok(d)
}

/// Advances `state` by `h`. The potentials of the previous call seed the next one.
#[pyfunction]
#[pyo3(signature = (state, h, params, dealias=false))]
fn time_step<'py>(
    py: Python<'py>,
    state: &PyState,
    h: f64,
    params: &PyParams,
    dealias: bool,
) -> PyResult<(PyState, Bound<'py, PyDict>)> {
    let p = params.checked()?.clone();
    let tol = SolverTolerances { dealias, ..SolverTolerances::default() };
    let prev = state.inner.clone();
    let warm = state.warm.clone();
    let out = py
        .allow_threads(|| step::coupled_time_step_warm(&prev, warm.as_ref(), h, &p, &tol))
        .map_err(to_py)?;
    let report = report_dict(py, &out.report)?;
    Ok((PyState { inner: out.next, warm: Some(out.potentials) }, report))
}

#[pyfunction]
fn forchheimer_root(c1: f64, c2: f64, r: f64, g: f64) -> PyResult<f64> {
    darcy::forchheimer_scalar_root(c1, c2, r, g).map_err(to_py)
}

#[pyfunction]
fn separation_margin(phi: &PyField, psi: &PyField) -> (f64, f64) {
    diagnostics::separation_margin(&phi.0, &psi.0)
}

/// Returns `(phi, psi, mu_phi, mu_psi, newton_iterations)`.
#[pyfunction]
fn stationary_solve(
    py: Python<'_>,
    phi_mass: f64,
    psi_mass: f64,
    seed_phi: &PyField,
    seed_psi: &PyField,
    params: &PyParams,
) -> PyResult<(PyField, PyField, f64, f64, usize)> {
    let p = params.checked()?.clone();
    let (a, b) = (seed_phi.0.clone(), seed_psi.0.clone());
    let sol = py
        .allow_threads(|| {
            diagnostics::stationary_solve(phi_mass, psi_mass, &a, &b, &p, &StationarySettings::default())
        })
        .map_err(to_py)?;
    Ok((PyField(sol.phi_inf), PyField(sol.psi_inf), sol.mu_phi_inf, sol.mu_psi_inf, sol.newton_iterations))
}

#[pyclass(name = "RunConfig", module = "chdf")]
#[derive(Clone)]
struct PyConfig(RunConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        config::load_config(&path).map(PyConfig).map_err(to_py)
    }
    /// Parses config text; relative paths resolve against `base`.
    #[staticmethod]
    #[pyo3(signature = (text, base=None))]
    fn parse(text: &str, base: Option<PathBuf>) -> PyResult<Self> {
        let base = base.unwrap_or_else(|| PathBuf::from("."));
        config::parse_config(text, &base).map(PyConfig).map_err(to_py)
    }
    #[getter]
    fn output_directory(&self) -> PathBuf {
        self.0.output.directory.clone()
    }
    #[setter]
    fn set_output_directory(&mut self, dir: PathBuf) {
        self.0.output.directory = dir;
    }
    #[getter]
    fn params(&self) -> PyParams {
        PyParams(self.0.model.clone())
    }
    /// Runs the time loop; returns the final state and the ledger path.
    fn run(&self, py: Python<'_>) -> PyResult<(PyState, PathBuf)> {
        let cfg = self.0.clone();
        let summary = py.allow_threads(|| driver::run(&cfg)).map_err(to_py)?;
        Ok((PyState { inner: summary.final_state, warm: None }, summary.series_path))
    }
    /// Returns `(name, passed, detail)` per invariant.
    fn check(&self, py: Python<'_>) -> PyResult<Vec<(String, bool, String)>> {
        let cfg = self.0.clone();
        let results = py.allow_threads(|| driver::check(&cfg)).map_err(to_py)?;
        Ok(results.into_iter().map(|r| (r.name.to_string(), r.passed, r.detail)).collect())
    }
}

#[pymodule]
fn chdf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(time_step, m)?)?;
    m.add_function(wrap_pyfunction!(forchheimer_root, m)?)?;
    m.add_function(wrap_pyfunction!(separation_margin, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_solve, m)?)?;
    Ok(())
}
