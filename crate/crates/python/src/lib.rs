use apeuler_core::analysis;
use apeuler_core::cases;
use apeuler_core::comp::{self, CompConfig};
use apeuler_core::fields::{CellScalar, CellVector};
use apeuler_core::harness;
use apeuler_core::incomp::{self, IncompConfig};
use apeuler_core::mesh::{self, GridShape, MeshSpec};
use apeuler_core::ops;
use apeuler_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::NonPositiveDensity { .. }
        | Error::DensityWindow { .. }
        | Error::NonlinearDivergence { .. }
        | Error::LinearSolver(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn scalar(shape: GridShape, values: Vec<f64>) -> PyResult<CellScalar> {
    CellScalar::new(shape, values).map_err(to_py)
}

/// Uniform periodic mesh of the unit square (or a rectangle).
#[pyclass(frozen)]
struct Mesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (nx, ny=None, lx=1.0, ly=1.0))]
    fn new(nx: usize, ny: Option<usize>, lx: f64, ly: f64) -> PyResult<Self> {
        let spec = MeshSpec::new(nx, ny.unwrap_or(nx), lx, ly);
        Ok(Self {
            inner: mesh::build_uniform_mesh(spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx()
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.num_cells()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    /// Cell centers in row-major order.
    fn centers(&self) -> Vec<(f64, f64)> {
        self.inner.cells().iter().map(|c| (c.center[0], c.center[1])).collect()
    }

    /// Central-difference gradient of a cell field, as `(gx, gy)`.
    fn grad(&self, q: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let q = scalar(self.inner.shape(), q)?;
        let (gx, gy) = ops::grad_primal(&self.inner, &q).into_components();
        Ok((gx.into_values(), gy.into_values()))
    }

    /// Divergence of a cell vector field through edge averages.
    fn div(&self, wx: Vec<f64>, wy: Vec<f64>) -> PyResult<Vec<f64>> {
        let w = CellVector::from_components(scalar(self.inner.shape(), wx)?, scalar(self.inner.shape(), wy)?)
            .map_err(to_py)?;
        Ok(ops::div_primal(&self.inner, &w).into_values())
    }

    #[pyo3(signature = (q, p=2.0))]
    fn lp_norm(&self, q: Vec<f64>, p: f64) -> PyResult<f64> {
        let q = scalar(self.inner.shape(), q)?;
        Ok(ops::lp_norm_p(&self.inner, &q, p))
    }

    fn __repr__(&self) -> String {
        format!("Mesh(nx={}, ny={}, h={})", self.inner.nx(), self.inner.ny(), self.inner.h())
    }
}

/// Final state and per-step history of a compressible run.
#[pyclass(frozen, get_all)]
struct CompResult {
    t: f64,
    steps: usize,
    min_dt: Option<f64>,
    rho: Vec<f64>,
    u_x: Vec<f64>,
    u_y: Vec<f64>,
    times: Vec<f64>,
    dt: Vec<f64>,
    energy: Vec<f64>,
    entropy: Vec<f64>,
    mass: Vec<f64>,
    energy_ok: bool,
}

/// Final state and per-step history of a limit-scheme run.
#[pyclass(frozen, get_all)]
struct IncompResult {
    t: f64,
    steps: usize,
    min_dt: Option<f64>,
    v_x: Vec<f64>,
    v_y: Vec<f64>,
    pi: Vec<f64>,
    times: Vec<f64>,
    kinetic_energy: Vec<f64>,
    div_residual: Vec<f64>,
    energy_ok: bool,
}

/// Compressible scheme on the shear case.
#[pyfunction]
#[pyo3(signature = (k, eps, t_final=0.02, gamma=2.0, cfl_fraction=0.9))]
fn run_comp(py: Python<'_>, k: usize, eps: f64, t_final: f64, gamma: f64, cfl_fraction: f64) -> PyResult<CompResult> {
    let config = CompConfig {
        eps,
        t_final,
        gamma,
        cfl_fraction,
        ..CompConfig::default()
    };
    let traj = py
        .detach(|| {
            let mesh = mesh::build_uniform_mesh(MeshSpec::unit_square(k))?;
            comp::run_comp(&mesh, &config, cases::shear_density(eps), cases::shear_velocity(eps))
        })
        .map_err(to_py)?;
    let last = traj.final_state().clone();
    let d = &traj.diagnostics;
    let (u_x, u_y) = last.u.into_components();
    Ok(CompResult {
        t: last.t,
        steps: last.step,
        min_dt: traj.min_dt(),
        rho: last.rho.into_values(),
        u_x: u_x.into_values(),
        u_y: u_y.into_values(),
        times: d.iter().map(|s| s.t).collect(),
        dt: d.iter().map(|s| s.dt).collect(),
        energy: d.iter().map(|s| s.energy).collect(),
        entropy: d.iter().map(|s| s.entropy_pi).collect(),
        mass: d.iter().map(|s| s.mass).collect(),
        energy_ok: d.iter().all(|s| s.energy_ok && s.entropy_ok),
    })
}

/// Limit scheme on the shear case.
#[pyfunction]
#[pyo3(signature = (k, t_final=0.02, eta=1.515, cfl_fraction=0.9))]
fn run_incomp(py: Python<'_>, k: usize, t_final: f64, eta: f64, cfl_fraction: f64) -> PyResult<IncompResult> {
    let config = IncompConfig {
        eta,
        t_final,
        cfl_fraction,
        ..IncompConfig::default()
    };
    let traj = py
        .detach(|| {
            let mesh = mesh::build_uniform_mesh(MeshSpec::unit_square(k))?;
            incomp::run_incomp(&mesh, &config, cases::shear_limit_velocity())
        })
        .map_err(to_py)?;
    let last = traj.final_state().clone();
    let d = &traj.diagnostics;
    let (v_x, v_y) = last.v.into_components();
    Ok(IncompResult {
        t: last.t,
        steps: last.step,
        min_dt: traj.min_dt(),
        v_x: v_x.into_values(),
        v_y: v_y.into_values(),
        pi: last.pi.into_values(),
        times: d.iter().map(|s| s.t).collect(),
        kinetic_energy: d.iter().map(|s| s.kinetic_energy).collect(),
        div_residual: d.iter().map(|s| s.div_residual).collect(),
        energy_ok: d.iter().all(|s| s.energy_ok),
    })
}

#[pyfunction]
fn w1_empirical(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::w1_empirical(&a, &b).map_err(to_py)
}

#[pyfunction]
fn eoc(errors: Vec<f64>, hs: Vec<f64>) -> PyResult<Vec<f64>> {
    analysis::eoc(&errors, &hs).map_err(to_py)
}

/// Block average of a square row-major field from `k_fine` to `k_coarse` cells per direction.
#[pyfunction]
fn restrict(values: Vec<f64>, k_fine: usize, k_coarse: usize) -> PyResult<Vec<f64>> {
    let fine = scalar(GridShape::new(k_fine, k_fine), values)?;
    Ok(analysis::restrict(&fine, GridShape::new(k_coarse, k_coarse))
        .map_err(to_py)?
        .into_values())
}

#[pyfunction]
fn default_config() -> String {
    harness::defaults_toml()
}

/// Runs the experiment in a TOML config; returns the written file paths
/// and the labels of failed runs.
#[pyfunction]
#[pyo3(signature = (path, out_dir=None))]
fn run_experiment(py: Python<'_>, path: String, out_dir: Option<String>) -> PyResult<(Vec<String>, Vec<String>)> {
    let mut config = harness::load_config(&path).map_err(to_py)?;
    if let Some(dir) = out_dir {
        config.out_dir = dir.into();
    }
    let report = py.detach(|| harness::run_experiment(&config)).map_err(to_py)?;
    Ok((
        report.files.iter().map(|p| p.display().to_string()).collect(),
        report.failures.iter().map(|f| f.label.clone()).collect(),
    ))
}

#[pymodule]
fn apeuler(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<CompResult>()?;
    m.add_class::<IncompResult>()?;
    m.add_function(wrap_pyfunction!(run_comp, m)?)?;
    m.add_function(wrap_pyfunction!(run_incomp, m)?)?;
    m.add_function(wrap_pyfunction!(w1_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(eoc, m)?)?;
    m.add_function(wrap_pyfunction!(restrict, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
