//! Velocity-stabilized semi-implicit scheme for the compressible barotropic
//! Euler system at Mach number `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{check_shape, CellScalar, CellVector};
use crate::linsolve::{bicgstab, Jacobi, LinearOperator, Preconditioner, SolveReport, SpectralPreconditioner};
use crate::mesh::Mesh;
use crate::ops::{self, EdgeSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearSolver {
    /// Newton's method on the mass balance with the exact (generalized)
    /// Jacobian of the stabilized upwind flux.
    Newton,
    /// Fixed-point iteration freezing the advecting split.
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportPreconditioner {
    Auto,
    Jacobi,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompConfig {
    pub gamma: f64,
    pub eps: f64,
    pub eta_margin: f64,
    pub cfl_fraction: f64,
    /// `None` means `t_final / 50`.
    pub dt_max: Option<f64>,
    pub t_final: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub nonlinear_solver: NonlinearSolver,
    pub preconditioner: TransportPreconditioner,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    /// Number of equispaced intermediate output times.
    pub outputs: usize,
}

impl Default for CompConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            eps: 1.0,
            eta_margin: 1.01,
            cfl_fraction: 0.9,
            dt_max: None,
            t_final: 0.02,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            rho_lo: 0.1,
            rho_hi: 10.0,
            nonlinear_solver: NonlinearSolver::Newton,
            preconditioner: TransportPreconditioner::Auto,
            linear_tol: 1e-10,
            linear_max_iter: 500,
            outputs: 8,
        }
    }
}

impl CompConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return fail(format!("gamma must exceed 1 (got {})", self.gamma));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return fail(format!("eps must be positive (got {})", self.eps));
        }
        if !(self.eta_margin >= 1.0) {
            return fail(format!("eta_margin must be at least 1 (got {})", self.eta_margin));
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return fail(format!("cfl_fraction must lie in (0, 1] (got {})", self.cfl_fraction));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return fail(format!("t_final must be non-negative (got {})", self.t_final));
        }
        if let Some(dt) = self.dt_max {
            if !(dt > 0.0) {
                return fail(format!("dt_max must be positive (got {dt})"));
            }
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return fail("picard_tol must be positive and picard_max_iter at least 1".into());
        }
        if !(self.linear_tol > 0.0) || self.linear_max_iter == 0 {
            return fail("linear_tol must be positive and linear_max_iter at least 1".into());
        }
        if !(self.rho_lo > 0.0 && self.rho_lo < self.rho_hi) {
            return fail(format!(
                "density window must satisfy 0 < rho_lo < rho_hi (got [{}, {}])",
                self.rho_lo, self.rho_hi
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
pub struct CompState {
    pub t: f64,
    pub step: usize,
    pub rho: CellScalar,
    pub u: CellVector,
}

impl CompState {
    pub fn momentum(&self) -> CellVector {
        self.u.mul_scalar(&self.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Timestep allowed by the sufficient condition before the final-time clip.
    pub dt_cfl: f64,
    pub eta: f64,
    pub picard_iters: usize,
    pub linear_iters: usize,
    pub energy: f64,
    pub entropy_pi: f64,
    pub mass: f64,
    pub mass_change: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub stab_dissipation: f64,
    pub energy_ok: bool,
    pub entropy_ok: bool,
    /// `E(t^{n+1}) + accumulated dissipation <= E(t^0)`, up to the same
    /// relative tolerance.
    pub global_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialReport {
    pub energy: f64,
    pub entropy_pi: f64,
    pub mass: f64,
    /// `max_K |rho_K - 1| / eps^2`.
    pub well_prepared_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompTrajectory {
    pub initial: InitialReport,
    pub snapshots: Vec<CompState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl CompTrajectory {
    pub fn final_state(&self) -> &CompState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn min_dt(&self) -> Option<f64> {
        min_dt(self.diagnostics.iter().map(|d| (d.dt, d.dt_cfl, d.t)))
    }
}

/// Smallest step taken, ignoring the final step when it was clipped to
/// land on `t_final`.
pub(crate) fn min_dt(series: impl Iterator<Item = (f64, f64, f64)>) -> Option<f64> {
    let all: Vec<(f64, f64, f64)> = series.collect();
    let n = all.len();
    all.iter()
        .enumerate()
        .filter(|(i, (dt, cfl, _))| !(*i + 1 == n && dt < cfl && n > 1))
        .map(|(_, (dt, _, _))| *dt)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

const ENERGY_RTOL: f64 = 1e-10;

fn check_positive(rho: &CellScalar) -> Result<()> {
    match rho.values().iter().position(|&r| !(r > 0.0)) {
        Some(cell) => Err(Error::NonPositiveDensity {
            cell,
            value: rho[cell],
        }),
        None => Ok(()),
    }
}

fn check_window(rho: &CellScalar, lo: f64, hi: f64) -> Result<()> {
    check_positive(rho)?;
    match rho.values().iter().position(|&r| r < lo || r > hi) {
        Some(cell) => Err(Error::DensityWindow {
            cell,
            value: rho[cell],
            lo,
            hi,
        }),
        None => Ok(()),
    }
}

/// `p = rho^gamma`.
pub fn pressure(rho: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        rho * rho
    } else {
        rho.powf(gamma)
    }
}

/// `psi = rho^gamma / (gamma - 1)`.
pub fn psi_value(rho: f64, gamma: f64) -> f64 {
    pressure(rho, gamma) / (gamma - 1.0)
}

/// Relative internal energy `psi(rho) - psi(1) - psi'(1) (rho - 1)`,
/// evaluated without cancellation near `rho = 1`.
pub fn pi_gamma_value(rho: f64, gamma: f64) -> f64 {
    let x = rho - 1.0;
    if x.abs() < 0.1 {
        // binomial series: sum_{k>=2} C(gamma, k) x^k / (gamma - 1)
        let mut coeff = gamma * (gamma - 1.0) / 2.0;
        let mut xk = x * x;
        let mut sum = 0.0;
        for k in 2..64 {
            let term = coeff * xk;
            sum += term;
            if term == 0.0 || term.abs() < 1e-18 * sum.abs() {
                break;
            }
            coeff *= (gamma - k as f64) / (k as f64 + 1.0);
            xk *= x;
        }
        sum / (gamma - 1.0)
    } else {
        let pm1 = (gamma * x.ln_1p()).exp_m1();
        (pm1 - gamma * x) / (gamma - 1.0)
    }
}

pub fn eos(rho: &CellScalar, gamma: f64) -> Result<CellScalar> {
    check_positive(rho)?;
    Ok(rho.map(|r| pressure(r, gamma)))
}

pub fn psi(rho: &CellScalar, gamma: f64) -> Result<CellScalar> {
    check_positive(rho)?;
    Ok(rho.map(|r| psi_value(r, gamma)))
}

pub fn pi_gamma(rho: &CellScalar, gamma: f64) -> Result<CellScalar> {
    check_positive(rho)?;
    Ok(rho.map(|r| pi_gamma_value(r, gamma)))
}

/// Total energy `sum |K| (rho |u|^2 / 2 + psi(rho) / eps^2)`.
pub fn total_energy(mesh: &Mesh, rho: &CellScalar, u: &CellVector, eps: f64, gamma: f64) -> f64 {
    energy_with(mesh, rho, u, eps, |r| psi_value(r, gamma))
}

/// Entropy variant with the relative internal energy in place of `psi`.
pub fn entropy_pi(mesh: &Mesh, rho: &CellScalar, u: &CellVector, eps: f64, gamma: f64) -> f64 {
    energy_with(mesh, rho, u, eps, |r| pi_gamma_value(r, gamma))
}

fn energy_with(mesh: &Mesh, rho: &CellScalar, u: &CellVector, eps: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv = 1.0 / (eps * eps);
    let (ux, uy) = (u.x().values(), u.y().values());
    mesh.cells()
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let r = rho[c];
            cell.measure * (0.5 * r * (ux[c] * ux[c] + uy[c] * uy[c]) + inv * f(r))
        })
        .sum()
}

pub fn init_comp(
    mesh: &Mesh,
    rho0: impl Fn(f64, f64) -> f64,
    u0: impl Fn(f64, f64) -> [f64; 2],
    config: &CompConfig,
) -> Result<(CompState, InitialReport)> {
    let rho = ops::project(mesh, rho0);
    check_positive(&rho)?;
    let u = ops::project_vector(mesh, u0);
    let state = CompState { t: 0.0, step: 0, rho, u };
    let report = InitialReport {
        energy: total_energy(mesh, &state.rho, &state.u, config.eps, config.gamma),
        entropy_pi: entropy_pi(mesh, &state.rho, &state.u, config.eps, config.gamma),
        mass: ops::integral(mesh, &state.rho),
        well_prepared_constant: state.rho.values().iter().fold(0.0f64, |m, r| m.max((r - 1.0).abs()))
            / (config.eps * config.eps),
    };
    log::info!(
        "initial energy {:.6e}, entropy {:.6e}, max|rho-1|/eps^2 = {:.4}",
        report.energy,
        report.entropy_pi,
        report.well_prepared_constant
    );
    Ok((state, report))
}

/// `du = (eta dt / eps^2) grad_T p(rho_new)`.
pub fn stabilization(mesh: &Mesh, rho_new: &CellScalar, dt: f64, eta: f64, eps: f64, gamma: f64) -> Result<CellVector> {
    let p = eos(rho_new, gamma)?;
    Ok(ops::grad_primal(mesh, &p).scaled(eta * dt / (eps * eps)))
}

/// `eta = margin * 3 / (2 min rho)`.
pub fn eta_rule(rho_n: &CellScalar, eta_margin: f64) -> f64 {
    eta_margin * 3.0 / (2.0 * rho_n.min())
}

/// Explicit version of the sufficient timestep condition, evaluated with
/// `rho^n`, `u^n` and `grad_T p^n`.
pub fn comp_dt(mesh: &Mesh, state: &CompState, grad_p: &CellVector, eta: f64, config: &CompConfig) -> f64 {
    let bound = sufficient_dt(mesh, &state.u, grad_p, eta / (config.eps * config.eps), |e| {
        let (a, b) = (state.rho[e.k], state.rho[e.l]);
        (a.min(b) / a.max(b) / 3.0).min(1.0)
    });
    (config.cfl_fraction * bound).min(config.dt_cap())
}

/// `min_sigma rhs_sigma / (max(|dK|/|K|, |dL|/|L|) (|{{u}}| + sqrt(coef |{{g}}|)))`.
pub(crate) fn sufficient_dt(
    mesh: &Mesh,
    u: &CellVector,
    g: &CellVector,
    coef: f64,
    rhs: impl Fn(&crate::mesh::Edge) -> f64,
) -> f64 {
    let cells = mesh.cells();
    let mut dt = f64::INFINITY;
    for e in mesh.edges() {
        let ratio = (cells[e.k].perimeter / cells[e.k].measure).max(cells[e.l].perimeter / cells[e.l].measure);
        let ua = ops::edge_average_vector(u, e);
        let ga = ops::edge_average_vector(g, e);
        let speed = ua[0].hypot(ua[1]) + (coef * ga[0].hypot(ga[1])).sqrt();
        if speed > 0.0 {
            dt = dt.min(rhs(e) / (ratio * speed));
        }
    }
    dt
}

/// Result of the implicit density solve.
#[derive(Debug, Clone)]
pub struct DensitySolve {
    pub rho: CellScalar,
    pub split: EdgeSplit,
    /// `grad_T p(rho^{n+1})`.
    pub grad_p: CellVector,
    pub iterations: usize,
    pub linear_iterations: usize,
    pub report: SolveReport,
}

/// Everything the residual and Jacobian need at a density iterate.
struct Linearization {
    split: EdgeSplit,
    grad_p: CellVector,
    du_normal: Vec<f64>,
}

fn linearize(mesh: &Mesh, rho: &CellScalar, u_normal: &[f64], stab: f64, gamma: f64) -> Linearization {
    let p = rho.map(|r| pressure(r, gamma));
    let grad_p = ops::grad_primal(mesh, &p);
    let du_normal: Vec<f64> = ops::edge_normal_average(mesh, &grad_p).iter().map(|g| stab * g).collect();
    let split = EdgeSplit::stabilized(u_normal, &du_normal);
    Linearization { split, grad_p, du_normal }
}

/// `rho - rho^n + dt div_up(rho, split)`.
fn mass_residual(mesh: &Mesh, rho: &CellScalar, rho_n: &CellScalar, split: &EdgeSplit, dt: f64) -> Vec<f64> {
    let mut flux = vec![0.0; mesh.num_cells()];
    ops::accumulate_upwind(mesh, rho, split, &mut flux);
    flux.iter()
        .enumerate()
        .map(|(c, f)| rho[c] - rho_n[c] + dt * f / mesh.cell(c).measure)
        .collect()
}

/// `v -> v + dt div_up(v, split)` with the split frozen.
struct FrozenTransport<'a> {
    mesh: &'a Mesh,
    split: &'a EdgeSplit,
    dt: f64,
}

impl LinearOperator for FrozenTransport<'_> {
    fn dim(&self) -> usize {
        self.mesh.num_cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, e) in self.mesh.edges().iter().enumerate() {
            let f = e.measure * (x[e.k] * self.split.plus[i] + x[e.l] * self.split.minus[i]);
            y[e.k] += f;
            y[e.l] -= f;
        }
        for (c, v) in y.iter_mut().enumerate() {
            *v = x[c] + self.dt * *v / self.mesh.cell(c).measure;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = vec![0.0; self.dim()];
        for (i, e) in self.mesh.edges().iter().enumerate() {
            d[e.k] += e.measure * self.split.plus[i];
            d[e.l] -= e.measure * self.split.minus[i];
        }
        Some(
            d.iter()
                .enumerate()
                .map(|(c, v)| 1.0 + self.dt * v / self.mesh.cell(c).measure)
                .collect(),
        )
    }
}

/// Generalized Jacobian of the mass residual. The stabilization enters the
/// flux through `-(du)^-` and `-(du)^+`, whose derivatives are Heaviside
/// factors selecting the donor density `s_sigma`.
struct MassJacobian<'a> {
    mesh: &'a Mesh,
    dt: f64,
    stab: f64,
    dp: Vec<f64>,
    split: &'a EdgeSplit,
    donor: Vec<f64>,
}

impl<'a> MassJacobian<'a> {
    fn new(mesh: &'a Mesh, rho: &CellScalar, lin: &'a Linearization, dt: f64, stab: f64, gamma: f64) -> Self {
        let dp = rho.values().iter().map(|&r| gamma * r.powf(gamma - 1.0)).collect();
        let donor = mesh
            .edges()
            .iter()
            .zip(&lin.du_normal)
            .map(|(e, &d)| {
                if d > 0.0 {
                    rho[e.l]
                } else if d < 0.0 {
                    rho[e.k]
                } else {
                    0.5 * (rho[e.k] + rho[e.l])
                }
            })
            .collect();
        Self {
            mesh,
            dt,
            stab,
            dp,
            split: &lin.split,
            donor,
        }
    }
}

impl LinearOperator for MassJacobian<'_> {
    fn dim(&self) -> usize {
        self.mesh.num_cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let shape = self.mesh.shape();
        let q = CellScalar::new(shape, x.iter().zip(&self.dp).map(|(a, b)| a * b).collect())
            .expect("operator dimension matches the mesh");
        let g = ops::grad_primal(self.mesh, &q);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, e) in self.mesh.edges().iter().enumerate() {
            let comp = g.component(e.axis.index());
            let ddu = self.stab * 0.5 * (comp[e.k] + comp[e.l]);
            let f = e.measure
                * (x[e.k] * self.split.plus[i] + x[e.l] * self.split.minus[i] - self.donor[i] * ddu);
            y[e.k] += f;
            y[e.l] -= f;
        }
        for (c, v) in y.iter_mut().enumerate() {
            *v = x[c] + self.dt * *v / self.mesh.cell(c).measure;
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = vec![0.0; self.dim()];
        let (hx, hy) = (self.mesh.hx(), self.mesh.hy());
        for (i, e) in self.mesh.edges().iter().enumerate() {
            let h = if e.axis.index() == 0 { hx } else { hy };
            let s = e.measure * self.donor[i] * self.stab / (4.0 * h);
            d[e.k] += e.measure * self.split.plus[i] + s * self.dp[e.k];
            d[e.l] += -e.measure * self.split.minus[i] + s * self.dp[e.l];
        }
        Some(
            d.iter()
                .enumerate()
                .map(|(c, v)| 1.0 + self.dt * v / self.mesh.cell(c).measure)
                .collect(),
        )
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Implicit density update. Solves the nonlinear upwind mass balance with
/// advecting velocity `u^n - du(rho^{n+1})` and returns the split evaluated
/// at the converged density.
pub fn density_picard(
    mesh: &Mesh,
    rho_n: &CellScalar,
    u_n: &CellVector,
    dt: f64,
    eta: f64,
    config: &CompConfig,
) -> Result<DensitySolve> {
    check_shape(mesh.shape(), rho_n.shape())?;
    check_shape(mesh.shape(), u_n.shape())?;
    check_positive(rho_n)?;
    let gamma = config.gamma;
    let stab = eta * dt / (config.eps * config.eps);
    let u_normal = ops::edge_normal_average(mesh, u_n);
    let mut rho = rho_n.clone();
    let mut linear_iterations = 0;
    let mut last_report = SolveReport {
        iterations: 0,
        residual: 0.0,
        relative_residual: 0.0,
        converged: true,
        removed_norm: 0.0,
    };
    let use_spectral = match config.preconditioner {
        TransportPreconditioner::Jacobi => false,
        TransportPreconditioner::Spectral => true,
        TransportPreconditioner::Auto => {
            let lam = 1.0 / (mesh.hx() * mesh.hx()) + 1.0 / (mesh.hy() * mesh.hy());
            dt * stab * gamma * ops::mean(mesh, rho_n).powf(gamma) * lam > 1.0
        }
    };
    let spectral = (use_spectral && config.nonlinear_solver == NonlinearSolver::Newton).then(|| {
        let a = dt * stab * gamma * ops::mean(mesh, rho_n).powf(gamma);
        SpectralPreconditioner::for_mesh(mesh, 1.0, a)
    });
    let mut last_update = f64::INFINITY;
    for it in 1..=config.picard_max_iter {
        let lin = linearize(mesh, &rho, &u_normal, stab, gamma);
        let update: Vec<f64> = match config.nonlinear_solver {
            NonlinearSolver::Newton => {
                let r = mass_residual(mesh, &rho, rho_n, &lin.split, dt);
                if max_abs(&r) == 0.0 {
                    vec![0.0; r.len()]
                } else {
                    let jac = MassJacobian::new(mesh, &rho, &lin, dt, stab, gamma);
                    let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
                    let mut delta = vec![0.0; rhs.len()];
                    let jacobi;
                    let pre: &dyn Preconditioner = match &spectral {
                        Some(s) => s,
                        None => {
                            jacobi = Jacobi::from_operator(&jac);
                            &jacobi
                        }
                    };
                    last_report = bicgstab(&jac, &rhs, &mut delta, config.linear_tol, config.linear_max_iter, pre);
                    linear_iterations += last_report.iterations;
                    delta
                }
            }
            NonlinearSolver::Picard => {
                let op = FrozenTransport { mesh, split: &lin.split, dt };
                let jacobi = Jacobi::from_operator(&op);
                let mut next = rho.values().to_vec();
                last_report = bicgstab(&op, rho_n.values(), &mut next, config.linear_tol, config.linear_max_iter, &jacobi);
                linear_iterations += last_report.iterations;
                next.iter().zip(rho.values()).map(|(a, b)| a - b).collect()
            }
        };
        // damp the update if it would leave the positive cone
        let mut theta = 1.0;
        let mut candidate;
        loop {
            candidate = rho.zip_map(
                &CellScalar::new(mesh.shape(), update.clone()).expect("mesh-sized update"),
                |r, d| r + theta * d,
            );
            if candidate.values().iter().all(|&v| v > 0.0) {
                break;
            }
            theta *= 0.5;
            if theta < 1e-8 {
                return Err(Error::NonPositiveDensity {
                    cell: candidate.values().iter().position(|&v| !(v > 0.0)).unwrap_or(0),
                    value: candidate.min(),
                });
            }
        }
        last_update = theta * max_abs(&update);
        rho = candidate;
        if !last_update.is_finite() {
            break;
        }
        if last_update <= config.picard_tol * rho.max_abs() {
            check_window(&rho, config.rho_lo, config.rho_hi)?;
            let lin = linearize(mesh, &rho, &u_normal, stab, gamma);
            return Ok(DensitySolve {
                rho,
                split: lin.split,
                grad_p: lin.grad_p,
                iterations: it,
                linear_iterations,
                report: last_report,
            });
        }
    }
    Err(Error::NonlinearDivergence {
        iterations: config.picard_max_iter,
        update: last_update,
    })
}

/// `rho^{n+1} u^{n+1} = rho^n u^n - dt div_up(rho^{n+1} u^n, split) - (dt/eps^2) grad_T p^{n+1}`.
pub fn velocity_update(
    mesh: &Mesh,
    rho_n: &CellScalar,
    u_n: &CellVector,
    rho_new: &CellScalar,
    split: &EdgeSplit,
    grad_p_new: &CellVector,
    dt: f64,
    eps: f64,
) -> CellVector {
    let inv_eps2 = 1.0 / (eps * eps);
    let mut out = CellVector::zeros(mesh.shape());
    for axis in 0..2 {
        let carried = u_n.component(axis).zip_map(rho_new, |a, b| a * b);
        let div = ops::div_upwind(mesh, &carried, split);
        let gp = grad_p_new.component(axis);
        let un = u_n.component(axis);
        let comp = out.component_mut(axis);
        for c in 0..mesh.num_cells() {
            let mom = rho_n[c] * un[c] - dt * div[c] - dt * inv_eps2 * gp[c];
            comp[c] = mom / rho_new[c];
        }
    }
    out
}

/// Advances one step, clipping `dt` so that `t` does not pass `t_stop`.
pub fn comp_step_until(
    mesh: &Mesh,
    state: &CompState,
    config: &CompConfig,
    t_stop: f64,
) -> Result<(CompState, StepDiagnostics)> {
    check_shape(mesh.shape(), state.rho.shape())?;
    let gamma = config.gamma;
    let eta = eta_rule(&state.rho, config.eta_margin);
    let p_n = eos(&state.rho, gamma)?;
    let grad_p_n = ops::grad_primal(mesh, &p_n);
    let dt_cfl = comp_dt(mesh, state, &grad_p_n, eta, config);
    let remaining = t_stop - state.t;
    let dt = if dt_cfl >= remaining { remaining } else { dt_cfl };
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive timestep {dt:e}")));
    }
    let solve = density_picard(mesh, &state.rho, &state.u, dt, eta, config)?;
    let u = velocity_update(mesh, &state.rho, &state.u, &solve.rho, &solve.split, &solve.grad_p, dt, config.eps);

    let e_old = total_energy(mesh, &state.rho, &state.u, config.eps, gamma);
    let s_old = entropy_pi(mesh, &state.rho, &state.u, config.eps, gamma);
    let energy = total_energy(mesh, &solve.rho, &u, config.eps, gamma);
    let entropy = entropy_pi(mesh, &solve.rho, &u, config.eps, gamma);
    let mass_old = ops::integral(mesh, &state.rho);
    let mass = ops::integral(mesh, &solve.rho);
    let inv_eps4 = 1.0 / config.eps.powi(4);
    let stab_dissipation = dt
        * dt
        * inv_eps4
        * mesh
            .cells()
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let g = solve.grad_p.get(c);
                cell.measure * (eta - 1.0 / solve.rho[c]) * (g[0] * g[0] + g[1] * g[1])
            })
            .sum::<f64>();
    let t = if dt == remaining { t_stop } else { state.t + dt };
    let diag = StepDiagnostics {
        step: state.step + 1,
        t,
        dt,
        dt_cfl,
        eta,
        picard_iters: solve.iterations,
        linear_iters: solve.linear_iterations,
        energy,
        entropy_pi: entropy,
        mass,
        mass_change: (mass - mass_old) / mass_old,
        rho_min: solve.rho.min(),
        rho_max: solve.rho.max(),
        stab_dissipation,
        energy_ok: energy <= e_old + ENERGY_RTOL * e_old.abs(),
        entropy_ok: entropy <= s_old + ENERGY_RTOL * s_old.abs(),
        global_ok: true,
    };
    if !diag.energy_ok || !diag.entropy_ok {
        log::warn!(
            "energy inequality violated at step {} (dE = {:e}, dS = {:e})",
            diag.step,
            energy - e_old,
            entropy - s_old
        );
    }
    let next = CompState {
        t,
        step: state.step + 1,
        rho: solve.rho,
        u,
    };
    Ok((next, diag))
}

pub fn comp_step(mesh: &Mesh, state: &CompState, config: &CompConfig) -> Result<(CompState, StepDiagnostics)> {
    comp_step_until(mesh, state, config, f64::INFINITY)
}

/// `t_final * j / (n + 1)` for `j = 1..=n`, followed by `t_final`.
pub fn output_schedule(t_final: f64, intermediates: usize) -> Vec<f64> {
    let mut times: Vec<f64> = (1..=intermediates)
        .map(|j| t_final * j as f64 / (intermediates + 1) as f64)
        .collect();
    times.push(t_final);
    times
}

pub fn run_comp(
    mesh: &Mesh,
    config: &CompConfig,
    rho0: impl Fn(f64, f64) -> f64,
    u0: impl Fn(f64, f64) -> [f64; 2],
) -> Result<CompTrajectory> {
    config.validate()?;
    let (state, initial) = init_comp(mesh, rho0, u0, config)?;
    run_comp_from(mesh, config, state, initial)
}

pub fn run_comp_from(
    mesh: &Mesh,
    config: &CompConfig,
    mut state: CompState,
    initial: InitialReport,
) -> Result<CompTrajectory> {
    config.validate()?;
    let mut snapshots = vec![state.clone()];
    let mut diagnostics = Vec::new();
    if config.t_final <= 0.0 {
        return Ok(CompTrajectory { initial, snapshots, diagnostics });
    }
    let schedule = output_schedule(config.t_final, config.outputs);
    let mut next_out = 0;
    let mut dissipated = 0.0;
    let e0 = initial.energy;
    while state.t < config.t_final {
        let (next, mut diag) = comp_step_until(mesh, &state, config, config.t_final)?;
        dissipated += diag.stab_dissipation;
        diag.global_ok = diag.energy + dissipated <= e0 + ENERGY_RTOL * e0.abs();
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
    Ok(CompTrajectory { initial, snapshots, diagnostics })
}
