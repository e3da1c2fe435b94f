//! Semi-implicit limit scheme for the incompressible Euler system:
//! stabilized divergence constraint, pressure solve and explicit upwind
//! momentum update.

use serde::{Deserialize, Serialize};

use crate::comp::{min_dt, output_schedule, sufficient_dt};
use crate::error::{Error, Result};
use crate::fields::{check_shape, CellScalar, CellVector};
use crate::linsolve::{deflated_pcg, wide_laplacian_kernel, NegWideLaplacian, SolveReport, SpectralPreconditioner};
use crate::mesh::{Mesh, DIM};
use crate::ops::{self, EdgeSplit};

/// Right-hand side of the sufficient timestep condition, by dimension.
pub fn beta(dim: usize) -> f64 {
    match dim {
        2 => 1.0 / 8.0,
        3 => 1.0 / 12.0,
        _ => panic!("unsupported dimension {dim}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompConfig {
    pub eta: f64,
    pub cfl_fraction: f64,
    /// `None` means `t_final / 50`.
    pub dt_max: Option<f64>,
    pub t_final: f64,
    pub pressure_tol: f64,
    pub pressure_max_iter: usize,
    pub outputs: usize,
}

impl Default for IncompConfig {
    fn default() -> Self {
        Self {
            eta: 1.515,
            cfl_fraction: 0.9,
            dt_max: None,
            t_final: 0.02,
            pressure_tol: 1e-10,
            pressure_max_iter: 200,
            outputs: 8,
        }
    }
}

impl IncompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must exceed 1 (got {})", self.eta)));
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "cfl_fraction must lie in (0, 1] (got {})",
                self.cfl_fraction
            )));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!("t_final must be non-negative (got {})", self.t_final)));
        }
        if let Some(dt) = self.dt_max {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt_max must be positive (got {dt})")));
            }
        }
        if !(self.pressure_tol > 0.0) || self.pressure_max_iter == 0 {
            return Err(Error::Config(
                "pressure_tol must be positive and pressure_max_iter at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn dt_cap(&self) -> f64 {
        match self.dt_max {
            Some(dt) => dt,
            None if self.t_final > 0.0 => self.t_final / 50.0,
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompState {
    pub t: f64,
    pub step: usize,
    pub v: CellVector,
    pub pi: CellScalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompDiagnostics {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub dt_cfl: f64,
    pub kinetic_energy: f64,
    /// `max_K |div_T (v^n - eta dt grad_T pi^{n+1})_K|`.
    pub div_residual: f64,
    pub pressure_iters: usize,
    pub pressure_converged: bool,
    pub removed_norm: f64,
    pub pi_max: f64,
    /// `(eta - 1) dt^2 sum |K| |grad_T pi^{n+1}|^2`.
    pub dissipation: f64,
    pub energy_ok: bool,
    pub global_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompTrajectory {
    pub initial_energy: f64,
    pub snapshots: Vec<IncompState>,
    pub diagnostics: Vec<IncompDiagnostics>,
}

impl IncompTrajectory {
    pub fn final_state(&self) -> &IncompState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn min_dt(&self) -> Option<f64> {
        min_dt(self.diagnostics.iter().map(|d| (d.dt, d.dt_cfl, d.t)))
    }
}

const ENERGY_RTOL: f64 = 1e-10;

pub fn kinetic_energy(mesh: &Mesh, v: &CellVector) -> f64 {
    0.5 * ops::inner_vector(mesh, v, v)
}

pub fn init_incomp(mesh: &Mesh, v0: impl Fn(f64, f64) -> [f64; 2]) -> IncompState {
    IncompState {
        t: 0.0,
        step: 0,
        v: ops::project_vector(mesh, v0),
        pi: CellScalar::zeros(mesh.shape()),
    }
}

/// Solves `eta dt (div_T o grad_T) pi = div_T v^n` for the mean-free,
/// checkerboard-free pressure.
pub fn pressure_solve(
    mesh: &Mesh,
    v_n: &CellVector,
    eta: f64,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(CellScalar, SolveReport)> {
    check_shape(mesh.shape(), v_n.shape())?;
    if !(eta > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pressure solve needs eta, dt > 0 (got {eta}, {dt})"
        )));
    }
    let scale = eta * dt;
    let op = NegWideLaplacian::for_mesh(mesh, scale);
    let pre = SpectralPreconditioner::for_mesh(mesh, 0.0, scale);
    let kernel = wide_laplacian_kernel(mesh.nx(), mesh.ny());
    let b: Vec<f64> = ops::div_primal(mesh, v_n).values().iter().map(|d| -d).collect();
    let mut x = vec![0.0; b.len()];
    let report = deflated_pcg(&op, &b, &mut x, tol, max_iter, &kernel, &pre);
    if !report.converged {
        return Err(Error::LinearSolver(format!(
            "pressure solve stalled after {} iterations (relative residual {:e})",
            report.iterations, report.relative_residual
        )));
    }
    Ok((CellScalar::new(mesh.shape(), x)?, report))
}

/// Explicit sufficient timestep with `v^n` and `grad_T pi^n`.
pub fn incomp_dt(mesh: &Mesh, v: &CellVector, pi: &CellScalar, config: &IncompConfig) -> f64 {
    let g = ops::grad_primal(mesh, pi);
    let bound = sufficient_dt(mesh, v, &g, config.eta, |_| beta(DIM));
    (config.cfl_fraction * bound).min(config.dt_cap())
}

pub fn incomp_step_until(
    mesh: &Mesh,
    state: &IncompState,
    config: &IncompConfig,
    t_stop: f64,
) -> Result<(IncompState, IncompDiagnostics)> {
    check_shape(mesh.shape(), state.v.shape())?;
    let dt_cfl = incomp_dt(mesh, &state.v, &state.pi, config);
    let remaining = t_stop - state.t;
    let dt = if dt_cfl >= remaining { remaining } else { dt_cfl };
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive timestep {dt:e}")));
    }
    let eta = config.eta;
    let (pi, report) = pressure_solve(mesh, &state.v, eta, dt, config.pressure_tol, config.pressure_max_iter)?;
    let grad_pi = ops::grad_primal(mesh, &pi);
    let dv = grad_pi.scaled(eta * dt);
    let w = state.v.sub(&dv);
    let div_residual = ops::div_primal(mesh, &w).max_abs();
    let split = EdgeSplit::stabilized(
        &ops::edge_normal_average(mesh, &state.v),
        &ops::edge_normal_average(mesh, &dv),
    );
    let mut v = CellVector::zeros(mesh.shape());
    for axis in 0..2 {
        let div = ops::div_upwind(mesh, state.v.component(axis), &split);
        let (vn, gp) = (state.v.component(axis), grad_pi.component(axis));
        let out = v.component_mut(axis);
        for c in 0..mesh.num_cells() {
            out[c] = vn[c] - dt * div[c] - dt * gp[c];
        }
    }
    let ke_old = kinetic_energy(mesh, &state.v);
    let ke = kinetic_energy(mesh, &v);
    let dissipation = (eta - 1.0) * dt * dt * ops::inner_vector(mesh, &grad_pi, &grad_pi);
    let t = if dt == remaining { t_stop } else { state.t + dt };
    let diag = IncompDiagnostics {
        step: state.step + 1,
        t,
        dt,
        dt_cfl,
        kinetic_energy: ke,
        div_residual,
        pressure_iters: report.iterations,
        pressure_converged: report.converged,
        removed_norm: report.removed_norm,
        pi_max: pi.max_abs(),
        dissipation,
        energy_ok: ke <= ke_old + ENERGY_RTOL * ke_old,
        global_ok: true,
    };
    if !diag.energy_ok {
        log::warn!("kinetic energy increased at step {} by {:e}", diag.step, ke - ke_old);
    }
    log::debug!("step {}: |pi|_inf = {:e}", diag.step, diag.pi_max);
    Ok((
        IncompState {
            t,
            step: state.step + 1,
            v,
            pi,
        },
        diag,
    ))
}

pub fn incomp_step(mesh: &Mesh, state: &IncompState, config: &IncompConfig) -> Result<(IncompState, IncompDiagnostics)> {
    incomp_step_until(mesh, state, config, f64::INFINITY)
}

pub fn run_incomp(
    mesh: &Mesh,
    config: &IncompConfig,
    v0: impl Fn(f64, f64) -> [f64; 2],
) -> Result<IncompTrajectory> {
    run_incomp_from(mesh, config, init_incomp(mesh, v0))
}

pub fn run_incomp_from(mesh: &Mesh, config: &IncompConfig, mut state: IncompState) -> Result<IncompTrajectory> {
    config.validate()?;
    let initial_energy = kinetic_energy(mesh, &state.v);
    let mut snapshots = vec![state.clone()];
    let mut diagnostics = Vec::new();
    if config.t_final <= 0.0 {
        return Ok(IncompTrajectory {
            initial_energy,
            snapshots,
            diagnostics,
        });
    }
    let schedule = output_schedule(config.t_final, config.outputs);
    let mut next_out = 0;
    let mut dissipated = 0.0;
    let mut max_pi = 0.0f64;
    while state.t < config.t_final {
        let (next, mut diag) = incomp_step_until(mesh, &state, config, config.t_final)?;
        dissipated += diag.dissipation;
        diag.global_ok = diag.kinetic_energy + dissipated <= initial_energy * (1.0 + ENERGY_RTOL);
        max_pi = max_pi.max(diag.pi_max);
        diagnostics.push(diag);
        state = next;
        while next_out < schedule.len() && state.t >= schedule[next_out] {
            if snapshots.last().map(|s| s.step) != Some(state.step) {
                snapshots.push(state.clone());
            }
            next_out += 1;
        }
    }
    if snapshots.last().map(|s| s.step) != Some(state.step) {
        snapshots.push(state);
    }
    log::info!("limit scheme finished; max |pi|_inf over the run = {max_pi:e}");
    Ok(IncompTrajectory {
        initial_energy,
        snapshots,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::mesh::{build_uniform_mesh, MeshSpec};
    use std::f64::consts::PI;

    #[test]
    fn constant_velocity_is_fixed_point() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(8)).unwrap();
        let state = init_incomp(&mesh, |_, _| [0.4, -1.1]);
        assert_eq!(ops::div_primal(&mesh, &state.v).max_abs(), 0.0);
        let (next, diag) = incomp_step(&mesh, &state, &IncompConfig::default()).unwrap();
        assert_eq!(next.pi.max_abs(), 0.0);
        for c in 0..mesh.num_cells() {
            assert!((next.v.x()[c] - 0.4).abs() < 1e-14 && (next.v.y()[c] + 1.1).abs() < 1e-14);
        }
        assert!(diag.energy_ok);
    }

    #[test]
    fn timestep_for_unit_velocity() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(32)).unwrap();
        let v = CellVector::constant(mesh.shape(), [0.0, 1.0]);
        let cfg = IncompConfig { dt_max: Some(1.0), cfl_fraction: 1.0, ..IncompConfig::default() };
        let dt = incomp_dt(&mesh, &v, &CellScalar::zeros(mesh.shape()), &cfg);
        assert!((dt - 1.0 / 32.0 / 32.0).abs() < 1e-16);
        let rest = incomp_dt(&mesh, &CellVector::zeros(mesh.shape()), &CellScalar::zeros(mesh.shape()), &IncompConfig::default());
        assert_eq!(rest, 0.02 / 50.0);
        assert_eq!(beta(3), 1.0 / 12.0);
    }

    #[test]
    fn manufactured_pressure_is_recovered() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(32)).unwrap();
        let (eta, dt) = (1.515, 1e-3);
        let target = ops::project(&mesh, |x, _| (2.0 * PI * x).cos());
        let v = ops::grad_primal(&mesh, &target).scaled(eta * dt);
        let (pi, rep) = pressure_solve(&mesh, &v, eta, dt, 1e-12, 100).unwrap();
        assert!(rep.converged);
        // cos(2 pi x) has no kernel component on a 32-periodic grid
        let err = pi.zip_map(&target, |a, b| a - b).max_abs();
        assert!(err < 1e-10, "{err}");
        assert!(ops::mean(&mesh, &pi).abs() < 1e-14);
        let (pi2, _) = pressure_solve(&mesh, &v, 2.0 * eta, dt, 1e-12, 100).unwrap();
        assert!(pi2.zip_map(&pi, |a, b| 2.0 * a - b).max_abs() < 1e-12);
    }

    #[test]
    fn shear_data_is_discretely_divergence_free() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(32)).unwrap();
        let state = init_incomp(&mesh, cases::shear_limit_velocity());
        assert!(ops::div_primal(&mesh, &state.v).max_abs() < 1e-12);
        let (pi, _) = pressure_solve(&mesh, &state.v, 1.515, 1e-3, 1e-10, 100).unwrap();
        assert!(pi.max_abs() < 1e-9);
    }
}
