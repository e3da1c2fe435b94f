//! Experiment configuration, sweep orchestration and CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, Ensemble, ErrorReport, Snapshot};
use crate::cases;
use crate::comp::{self, CompConfig, CompState, NonlinearSolver, TransportPreconditioner};
use crate::error::{Error, Result};
use crate::fields::{CellScalar, CellVector};
use crate::incomp::{self, IncompConfig, IncompState};
use crate::mesh::{build_uniform_mesh, Mesh, MeshSpec};
use crate::ops::{self, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Compressible scheme over the `(grid, eps)` product.
    Compressible,
    /// Limit scheme over the grid list.
    Incompressible,
    /// Mesh convergence of the limit scheme and the cross-scheme relative
    /// energy on the finest grid.
    ConvergenceStudy,
    /// Compressible sweep with density asymptotics, the scheme-to-scheme
    /// velocity difference, error tables per `eps` and divergence report.
    AsymptoticStudy,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Compressible => "compressible",
            Mode::Incompressible => "incompressible",
            Mode::ConvergenceStudy => "convergence_study",
            Mode::AsymptoticStudy => "asymptotic_study",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compressible" => Ok(Mode::Compressible),
            "incompressible" => Ok(Mode::Incompressible),
            "convergence_study" => Ok(Mode::ConvergenceStudy),
            "asymptotic_study" => Ok(Mode::AsymptoticStudy),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected compressible, incompressible, convergence_study or asymptotic_study)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Cells per direction of each run.
    pub grids: Vec<usize>,
    pub eps: Vec<f64>,
    pub gamma: f64,
    pub t_final: f64,
    /// Equispaced intermediate output times between the initial and final state.
    pub outputs: usize,
    /// Reference resolution of the study modes; joins the grid list if absent.
    pub reference_grid: usize,

    pub eta_margin: f64,
    pub cfl_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub nonlinear_solver: NonlinearSolver,
    pub preconditioner: TransportPreconditioner,
    pub linear_tol: f64,
    pub linear_max_iter: usize,

    pub eta_incomp: f64,
    pub pressure_tol: f64,
    pub pressure_max_iter: usize,

    #[serde(skip_serializing_if = "is_empty_path")]
    pub out_dir: PathBuf,
    /// Size of the worker pool; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
    pub write_fields: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let c = CompConfig::default();
        let i = IncompConfig::default();
        Self {
            mode: Mode::Compressible,
            grids: vec![32, 64, 128, 256],
            eps: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4],
            gamma: c.gamma,
            t_final: c.t_final,
            outputs: c.outputs,
            reference_grid: 512,
            eta_margin: c.eta_margin,
            cfl_fraction: c.cfl_fraction,
            dt_max: None,
            picard_tol: c.picard_tol,
            picard_max_iter: c.picard_max_iter,
            rho_lo: c.rho_lo,
            rho_hi: c.rho_hi,
            nonlinear_solver: c.nonlinear_solver,
            preconditioner: c.preconditioner,
            linear_tol: c.linear_tol,
            linear_max_iter: c.linear_max_iter,
            eta_incomp: i.eta,
            pressure_tol: i.pressure_tol,
            pressure_max_iter: i.pressure_max_iter,
            out_dir: PathBuf::from("out"),
            workers: 0,
            seed: 0,
            write_fields: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let Some(&k0) = self.grids.first() else {
            return fail("grids must not be empty".into());
        };
        if k0 < 2 {
            return fail(format!("grids must have at least 2 cells per direction (got {k0})"));
        }
        for w in self.grids.windows(2) {
            if w[1] <= w[0] {
                return fail(format!("grids must be strictly increasing ({} then {})", w[0], w[1]));
            }
        }
        for &k in self.grids.iter().chain([&self.reference_grid]) {
            if k % k0 != 0 || !(k / k0).is_power_of_two() {
                return fail(format!("grid {k} is not a power-of-two multiple of the smallest grid {k0}"));
            }
        }
        if self.reference_grid < *self.grids.last().unwrap() {
            return fail(format!(
                "reference_grid {} is coarser than the finest grid {}",
                self.reference_grid,
                self.grids.last().unwrap()
            ));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return fail(format!("eps values must be positive and finite (got {e})"));
        }
        let needs_eps = matches!(self.mode, Mode::Compressible | Mode::AsymptoticStudy);
        if needs_eps && self.eps.is_empty() {
            return fail(format!("mode {} needs at least one eps value", self.mode));
        }
        if self.mode == Mode::AsymptoticStudy {
            for w in self.eps.windows(2) {
                if w[1] >= w[0] {
                    return fail(format!("eps must be strictly decreasing in asymptotic_study ({} then {})", w[0], w[1]));
                }
            }
        }
        for &eps in self.eps.iter().take(1) {
            self.comp_config(eps).validate()?;
        }
        self.incomp_config().validate()?;
        Ok(())
    }

    pub fn comp_config(&self, eps: f64) -> CompConfig {
        CompConfig {
            gamma: self.gamma,
            eps,
            eta_margin: self.eta_margin,
            cfl_fraction: self.cfl_fraction,
            dt_max: self.dt_max,
            t_final: self.t_final,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            rho_lo: self.rho_lo,
            rho_hi: self.rho_hi,
            nonlinear_solver: self.nonlinear_solver,
            preconditioner: self.preconditioner,
            linear_tol: self.linear_tol,
            linear_max_iter: self.linear_max_iter,
            outputs: self.outputs,
        }
    }

    pub fn incomp_config(&self) -> IncompConfig {
        IncompConfig {
            eta: self.eta_incomp,
            cfl_fraction: self.cfl_fraction,
            dt_max: self.dt_max,
            t_final: self.t_final,
            pressure_tol: self.pressure_tol,
            pressure_max_iter: self.pressure_max_iter,
            outputs: self.outputs,
        }
    }

    /// The settings that influence results: the output directory and the
    /// worker count are cleared.
    pub fn canonical(&self) -> Self {
        Self {
            out_dir: PathBuf::new(),
            workers: 0,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().to_toml_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Study grids: the grid list with the reference grid appended.
    fn study_grids(&self) -> Vec<usize> {
        let mut g = self.grids.clone();
        if *g.last().unwrap() != self.reference_grid {
            g.push(self.reference_grid);
        }
        g
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Default configuration as commented TOML.
pub fn defaults_toml() -> String {
    let mut s = String::new();
    s.push_str("# apeuler experiment configuration (defaults)\n");
    s.push_str("# mode: compressible | incompressible | convergence_study | asymptotic_study\n");
    s.push_str("# nonlinear_solver: newton | picard; preconditioner: auto | jacobi | spectral\n");
    s.push_str("# workers = 0 uses every available core\n");
    s.push_str("# dt_max = <float>   optional timestep cap, t_final / 50 when unset\n\n");
    s.push_str(&ExperimentConfig::default().to_toml_string());
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RunSpec {
    Comp { k: usize, eps: f64 },
    Incomp { k: usize },
}

impl RunSpec {
    fn label(&self) -> String {
        match self {
            RunSpec::Comp { k, eps } => format!("comp_k{k}_eps{}", eps_label(*eps)),
            RunSpec::Incomp { k } => format!("incomp_k{k}"),
        }
    }

    fn cost(&self) -> f64 {
        match *self {
            RunSpec::Comp { k, .. } => 20.0 * (k as f64).powi(3),
            RunSpec::Incomp { k } => (k as f64).powi(3),
        }
    }
}

fn is_empty_path(p: &Path) -> bool {
    p.as_os_str().is_empty()
}

fn eps_label(eps: f64) -> String {
    format!("{eps:e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompRun {
    pub k: usize,
    pub eps: f64,
    pub steps: usize,
    pub min_dt: Option<f64>,
    /// Largest relative mass change over a single step.
    pub max_mass_change: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub energy_violations: usize,
    pub entropy_violations: usize,
    pub global_violations: usize,
    /// `(t, ||rho - 1||_{L^gamma})` at the output times.
    pub deviation: Vec<(f64, f64)>,
    pub deviation_sup: f64,
    pub final_state: CompState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompRun {
    pub k: usize,
    pub steps: usize,
    pub min_dt: Option<f64>,
    pub max_div_residual: f64,
    pub energy_violations: usize,
    pub global_violations: usize,
    pub pressure_failures: usize,
    pub final_state: IncompState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub label: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub k: usize,
    pub h: f64,
    pub errors: ErrorReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub scheme: String,
    pub eps: Option<f64>,
    pub group: String,
    pub rows: Vec<ConvergenceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocRow {
    pub k: usize,
    pub error_l2: f64,
    pub eoc: Option<f64>,
}

/// In-memory view of everything written to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyReport {
    pub config_hash: String,
    pub comp_runs: Vec<CompRun>,
    pub incomp_runs: Vec<IncompRun>,
    pub failures: Vec<RunFailure>,
    /// `(k, eps, ||u_eps(T) - v(T)||_{L1})`.
    pub velocity_difference: Vec<(usize, f64, f64)>,
    /// `(k, eps, max |div_T u|, ||div_T u||_{L1})` at the final time.
    pub divergence: Vec<(usize, f64, f64, f64)>,
    pub convergence: Vec<ConvergenceTable>,
    pub rel_energy_incomp: Vec<(usize, f64)>,
    pub eoc: Vec<EocRow>,
    pub rel_energy_cross: Vec<(f64, f64)>,
    /// Paths of written files, relative to the output directory.
    pub files: Vec<PathBuf>,
}

impl StudyReport {
    pub fn comp(&self, k: usize, eps: f64) -> Option<&CompRun> {
        self.comp_runs.iter().find(|r| r.k == k && r.eps == eps)
    }

    pub fn incomp(&self, k: usize) -> Option<&IncompRun> {
        self.incomp_runs.iter().find(|r| r.k == k)
    }

    pub fn table(&self, scheme: &str, eps: Option<f64>, group: &str) -> Option<&ConvergenceTable> {
        self.convergence
            .iter()
            .find(|t| t.scheme == scheme && t.eps == eps && t.group == group)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the experiment selected by `config.mode` and writes its outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<StudyReport> {
    match config.mode {
        Mode::Compressible | Mode::Incompressible => run_sweep(config),
        Mode::AsymptoticStudy => run_case_study_a(config),
        Mode::ConvergenceStudy => run_case_study_b(config),
    }
}

fn run_sweep(config: &ExperimentConfig) -> Result<StudyReport> {
    config.validate()?;
    let specs: Vec<RunSpec> = match config.mode {
        Mode::Incompressible => config.grids.iter().map(|&k| RunSpec::Incomp { k }).collect(),
        _ => comp_specs(&config.grids, &config.eps),
    };
    let mut out = Output::create(config)?;
    let mut report = out.execute(config, &specs)?;
    out.finish(&mut report, config)?;
    Ok(report)
}

fn comp_specs(grids: &[usize], eps: &[f64]) -> Vec<RunSpec> {
    grids
        .iter()
        .flat_map(|&k| eps.iter().map(move |&eps| RunSpec::Comp { k, eps }))
        .collect()
}

/// Compressible study on the grid list plus the reference grid: density
/// asymptotics, `||u_eps - v||_{L1}`, E1-E4 tables per `eps` and the
/// final-time divergence of the velocity.
pub fn run_case_study_a(config: &ExperimentConfig) -> Result<StudyReport> {
    if config.mode != Mode::AsymptoticStudy {
        return Err(Error::Config(format!("run_case_study_a needs mode asymptotic_study (got {})", config.mode)));
    }
    config.validate()?;
    let grids = config.study_grids();
    let mut specs = comp_specs(&grids, &config.eps);
    specs.extend(grids.iter().map(|&k| RunSpec::Incomp { k }));
    let mut out = Output::create(config)?;
    let mut report = out.execute(config, &specs)?;

    let mut vel = Vec::new();
    let mut div = Vec::new();
    for &k in &grids {
        let mesh = unit_mesh(k)?;
        for &eps in &config.eps {
            let Some(run) = report.comp(k, eps) else { continue };
            let (dmax, dl1) = analysis::divergence_norms(&mesh, &run.final_state.u);
            div.push((k, eps, dmax, dl1));
            if let Some(lim) = report.incomp(k) {
                let d = run.final_state.u.sub(&lim.final_state.v);
                vel.push((k, eps, componentwise_l1(&mesh, &d)));
            }
        }
    }
    report.velocity_difference = vel;
    report.divergence = div;

    for &eps in &config.eps {
        let finals: Option<Vec<CompState>> = grids
            .iter()
            .map(|&k| report.comp(k, eps).map(|r| r.final_state.clone()))
            .collect();
        let Some(finals) = finals else {
            log::warn!("skipping error tables for eps = {eps:e}: a run of the sequence failed");
            continue;
        };
        let groups: [(&str, fn(&CompState) -> Snapshot); 3] = [
            ("density", |s| Snapshot::new(vec![s.rho.clone()]).unwrap()),
            ("momentum", |s| {
                let (mx, my) = s.momentum().into_components();
                Snapshot::new(vec![mx, my]).unwrap()
            }),
            ("all", |s| {
                let (mx, my) = s.momentum().into_components();
                Snapshot::new(vec![s.rho.clone(), mx, my]).unwrap()
            }),
        ];
        for (group, make) in groups {
            let snaps: Vec<Snapshot> = finals.iter().map(make).collect();
            let rows = convergence_rows(&config.grids, &grids, &snaps, config.t_final)?;
            report.convergence.push(ConvergenceTable {
                scheme: "comp".into(),
                eps: Some(eps),
                group: group.into(),
                rows,
            });
        }
    }

    let hash = report.config_hash.clone();
    let mut t = Table::new(&["k", "eps", "t", "deviation"]);
    let mut s = Table::new(&["k", "eps", "sup", "bound_10eps2"]);
    for r in &report.comp_runs {
        for &(time, d) in &r.deviation {
            t.row(vec![r.k.to_string(), f(r.eps), f(time), f(d)]);
        }
        s.row(vec![r.k.to_string(), f(r.eps), f(r.deviation_sup), f(10.0 * r.eps * r.eps)]);
    }
    out.write_table(&mut report, "density_deviation.csv", &t, &hash)?;
    out.write_table(&mut report, "density_deviation_sup.csv", &s, &hash)?;

    let mut t = Table::new(&["k", "eps", "l1_error"]);
    for &(k, eps, e) in &report.velocity_difference {
        t.row(vec![k.to_string(), f(eps), f(e)]);
    }
    out.write_table(&mut report, "velocity_difference.csv", &t, &hash)?;

    let mut t = Table::new(&["k", "eps", "div_max", "div_l1"]);
    for &(k, eps, m, l1) in &report.divergence {
        t.row(vec![k.to_string(), f(eps), f(m), f(l1)]);
    }
    out.write_table(&mut report, "divergence.csv", &t, &hash)?;

    for table in report.convergence.clone() {
        let name = format!("convergence_comp_eps{}_{}.csv", eps_label(table.eps.unwrap()), table.group);
        out.write_table(&mut report, &name, &convergence_csv(&table), &hash)?;
    }

    out.finish(&mut report, config)?;
    Ok(report)
}

/// Limit-scheme study: E1-E4 tables, relative energy and L2 error with EOC
/// against the reference grid, and the relative energy of the compressible
/// solutions with respect to the limit solution on the finest grid.
pub fn run_case_study_b(config: &ExperimentConfig) -> Result<StudyReport> {
    if config.mode != Mode::ConvergenceStudy {
        return Err(Error::Config(format!("run_case_study_b needs mode convergence_study (got {})", config.mode)));
    }
    config.validate()?;
    let grids = config.study_grids();
    let finest = *config.grids.last().unwrap();
    let mut specs: Vec<RunSpec> = grids.iter().map(|&k| RunSpec::Incomp { k }).collect();
    specs.extend(config.eps.iter().map(|&eps| RunSpec::Comp { k: finest, eps }));
    let mut out = Output::create(config)?;
    let mut report = out.execute(config, &specs)?;
    let hash = report.config_hash.clone();

    let finals: Option<Vec<IncompState>> = grids
        .iter()
        .map(|&k| report.incomp(k).map(|r| r.final_state.clone()))
        .collect();
    if let Some(finals) = finals {
        let snaps: Vec<Snapshot> = finals
            .iter()
            .map(|s| Snapshot::new(vec![s.v.x().clone(), s.v.y().clone()]).unwrap())
            .collect();
        let rows = convergence_rows(&config.grids, &grids, &snaps, config.t_final)?;
        report.convergence.push(ConvergenceTable {
            scheme: "incomp".into(),
            eps: None,
            group: "velocity".into(),
            rows,
        });
        let reference = &finals.last().unwrap().v;
        let mut prev: Option<(f64, f64)> = None;
        for (&k, state) in config.grids.iter().zip(&finals) {
            let mesh = unit_mesh(k)?;
            let r = analysis::restrict_vector(reference, mesh.shape())?;
            let e = ops::lp_norm_vector(&mesh, &state.v.sub(&r), Norm::L2);
            report.rel_energy_incomp.push((k, analysis::rel_energy_incomp(&mesh, &state.v, &r)?));
            let h = mesh.h();
            let rate = match prev {
                Some((e0, h0)) if e0 > 0.0 && e > 0.0 => Some(analysis::eoc(&[e0, e], &[h0, h])?[0]),
                _ => None,
            };
            report.eoc.push(EocRow { k, error_l2: e, eoc: rate });
            prev = Some((e, h));
        }
    } else {
        log::warn!("skipping limit-scheme tables: a run of the sequence failed");
    }

    if let Some(lim) = report.incomp(finest).map(|r| r.final_state.v.clone()) {
        let mesh = unit_mesh(finest)?;
        let one = CellScalar::constant(mesh.shape(), 1.0);
        for &eps in &config.eps {
            let Some(run) = report.comp(finest, eps) else { continue };
            let st = &run.final_state;
            let e = analysis::rel_energy_comp(&mesh, &st.rho, &st.momentum(), &one, &lim, eps, config.gamma)?;
            report.rel_energy_cross.push((eps, e));
        }
    }

    for table in report.convergence.clone() {
        out.write_table(&mut report, "convergence_incomp_velocity.csv", &convergence_csv(&table), &hash)?;
    }
    let mut t = Table::new(&["k", "rel_energy"]);
    for &(k, e) in &report.rel_energy_incomp {
        t.row(vec![k.to_string(), f(e)]);
    }
    out.write_table(&mut report, "rel_energy_incomp.csv", &t, &hash)?;
    let mut t = Table::new(&["k", "error_l2", "eoc"]);
    for r in &report.eoc {
        t.row(vec![r.k.to_string(), f(r.error_l2), r.eoc.map(f).unwrap_or_default()]);
    }
    out.write_table(&mut report, "eoc.csv", &t, &hash)?;
    let mut t = Table::new(&["eps", "rel_energy"]);
    for &(eps, e) in &report.rel_energy_cross {
        t.row(vec![f(eps), f(e)]);
    }
    out.write_table(&mut report, "rel_energy_cross.csv", &t, &hash)?;

    out.finish(&mut report, config)?;
    Ok(report)
}

/// One row per entry of `rows_for`, comparing the ensemble of the members up
/// to that grid with the full ensemble, all restricted to the coarsest grid.
fn convergence_rows(rows_for: &[usize], grids: &[usize], snaps: &[Snapshot], time: f64) -> Result<Vec<ConvergenceRow>> {
    let mesh = unit_mesh(grids[0])?;
    let all = Ensemble::from_fine_members(snaps, mesh.shape(), time)?;
    rows_for
        .iter()
        .enumerate()
        .map(|(n, &k)| {
            let ens = all.prefix(n + 1)?;
            let errors = analysis::error_suite(&mesh, &ens, &all, &format!("k{k}"))?;
            Ok(ConvergenceRow { k, h: 1.0 / k as f64, errors })
        })
        .collect()
}

fn convergence_csv(table: &ConvergenceTable) -> Table {
    let mut t = Table::new(&["k", "h", "E1", "E2", "E3", "E4"]);
    for r in &table.rows {
        let e = &r.errors;
        t.row(vec![r.k.to_string(), f(r.h), f(e.e1), f(e.e2), f(e.e3), f(e.e4)]);
    }
    t
}

fn unit_mesh(k: usize) -> Result<Mesh> {
    build_uniform_mesh(MeshSpec::unit_square(k))
}

/// Sum of the L1 norms of the components.
fn componentwise_l1(mesh: &Mesh, v: &CellVector) -> f64 {
    ops::lp_norm(mesh, v.x(), Norm::L1) + ops::lp_norm(mesh, v.y(), Norm::L1)
}

enum RunData {
    Comp(Box<CompRun>),
    Incomp(Box<IncompRun>),
}

struct Output {
    root: PathBuf,
    hash: String,
}

impl Output {
    fn create(config: &ExperimentConfig) -> Result<Self> {
        let root = config.out_dir.clone();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root, hash: config.hash() })
    }

    fn execute(&mut self, config: &ExperimentConfig, specs: &[RunSpec]) -> Result<StudyReport> {
        let mut order: Vec<usize> = (0..specs.len()).collect();
        order.sort_by(|&a, &b| specs[b].cost().total_cmp(&specs[a].cost()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        let root = &self.root;
        let hash = &self.hash;
        let mut results: Vec<(usize, std::result::Result<(RunData, Vec<PathBuf>), String>)> = pool.install(|| {
            order
                .par_iter()
                .map(|&i| {
                    let spec = specs[i];
                    let label = spec.label();
                    let start = Instant::now();
                    let outcome = catch_unwind(AssertUnwindSafe(|| execute_run(config, spec, root, hash)))
                        .unwrap_or_else(|panic| {
                            let msg = panic
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_else(|| "unknown panic".into());
                            Err(Error::InvalidArgument(format!("panic: {msg}")))
                        })
                        .map_err(|e| e.to_string());
                    match &outcome {
                        Ok(_) => log::info!("{label} finished in {:.2} s", start.elapsed().as_secs_f64()),
                        Err(e) => {
                            log::error!("{label} failed: {e}");
                            let dir = root.join("runs").join(&label);
                            let _ = fs::remove_dir_all(&dir);
                            let _ = fs::create_dir_all(&dir)
                                .and_then(|_| atomic_write(&dir.join("failed.txt"), &format!("{e}\n")).map_err(std::io::Error::other));
                        }
                    }
                    (i, outcome)
                })
                .collect()
        });
        results.sort_by_key(|(i, _)| *i);

        let mut report = StudyReport {
            config_hash: self.hash.clone(),
            ..Default::default()
        };
        let mut summary = Table::new(&["label", "kind", "k", "eps", "status", "steps", "min_dt", "message"]);
        for (i, outcome) in results {
            let spec = specs[i];
            let label = spec.label();
            let (kind, k, eps) = match spec {
                RunSpec::Comp { k, eps } => ("comp", k, f(eps)),
                RunSpec::Incomp { k } => ("incomp", k, String::new()),
            };
            match outcome {
                Ok((data, files)) => {
                    report.files.extend(files);
                    let (steps, min_dt) = match data {
                        RunData::Comp(r) => {
                            let v = (r.steps, r.min_dt);
                            report.comp_runs.push(*r);
                            v
                        }
                        RunData::Incomp(r) => {
                            let v = (r.steps, r.min_dt);
                            report.incomp_runs.push(*r);
                            v
                        }
                    };
                    summary.row(vec![
                        label,
                        kind.into(),
                        k.to_string(),
                        eps,
                        "ok".into(),
                        steps.to_string(),
                        min_dt.map(f).unwrap_or_default(),
                        String::new(),
                    ]);
                }
                Err(message) => {
                    report.files.push(Path::new("runs").join(&label).join("failed.txt"));
                    summary.row(vec![
                        label.clone(),
                        kind.into(),
                        k.to_string(),
                        eps,
                        "failed".into(),
                        String::new(),
                        String::new(),
                        message.replace([',', '\n'], ";"),
                    ]);
                    report.failures.push(RunFailure { label, message });
                }
            }
        }
        let hash = self.hash.clone();
        self.write_table(&mut report, "summary.csv", &summary, &hash)?;
        Ok(report)
    }

    fn write_table(&self, report: &mut StudyReport, name: &str, table: &Table, hash: &str) -> Result<()> {
        let path = self.root.join(name);
        atomic_write(&path, &table.render(hash))?;
        report.files.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(&mut self, report: &mut StudyReport, config: &ExperimentConfig) -> Result<()> {
        let text = format!("# config_sha256={}\n{}", self.hash, config.canonical().to_toml_string());
        atomic_write(&self.root.join("config.toml"), &text)?;
        report.files.push(PathBuf::from("config.toml"));
        report.files.sort();
        report.files.dedup();
        Ok(())
    }
}

fn execute_run(config: &ExperimentConfig, spec: RunSpec, root: &Path, hash: &str) -> Result<(RunData, Vec<PathBuf>)> {
    let label = spec.label();
    let rel_dir = Path::new("runs").join(&label);
    let dir = root.join(&rel_dir);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut files = Vec::new();
    match spec {
        RunSpec::Comp { k, eps } => {
            let mesh = unit_mesh(k)?;
            let cc = config.comp_config(eps);
            let traj = comp::run_comp(&mesh, &cc, cases::shear_density(eps), cases::shear_velocity(eps))?;
            let init = &traj.snapshots[0];
            let d = &traj.diagnostics;
            let (deviation, deviation_sup) =
                analysis::density_deviation(&mesh, traj.snapshots.iter().map(|s| (s.t, &s.rho)), config.gamma);
            let run = CompRun {
                k,
                eps,
                steps: d.len(),
                min_dt: traj.min_dt(),
                max_mass_change: d.iter().map(|s| s.mass_change.abs()).fold(0.0, f64::max),
                rho_min: d.iter().map(|s| s.rho_min).fold(init.rho.min(), f64::min),
                rho_max: d.iter().map(|s| s.rho_max).fold(init.rho.max(), f64::max),
                energy_violations: d.iter().filter(|s| !s.energy_ok).count(),
                entropy_violations: d.iter().filter(|s| !s.entropy_ok).count(),
                global_violations: d.iter().filter(|s| !s.global_ok).count(),
                deviation,
                deviation_sup,
                final_state: traj.final_state().clone(),
            };

            let mut t = Table::new(&[
                "step",
                "t",
                "dt",
                "picard_iters",
                "energy",
                "entropy_pi",
                "mass",
                "rho_min",
                "rho_max",
                "stab_dissipation",
                "energy_ok",
            ]);
            t.row(vec![
                "0".into(),
                f(0.0),
                f(0.0),
                "0".into(),
                f(traj.initial.energy),
                f(traj.initial.entropy_pi),
                f(traj.initial.mass),
                f(init.rho.min()),
                f(init.rho.max()),
                f(0.0),
                "true".into(),
            ]);
            for s in d {
                t.row(vec![
                    s.step.to_string(),
                    f(s.t),
                    f(s.dt),
                    s.picard_iters.to_string(),
                    f(s.energy),
                    f(s.entropy_pi),
                    f(s.mass),
                    f(s.rho_min),
                    f(s.rho_max),
                    f(s.stab_dissipation),
                    s.energy_ok.to_string(),
                ]);
            }
            let mut dev = Table::new(&["t", "deviation"]);
            for &(time, v) in &run.deviation {
                dev.row(vec![f(time), f(v)]);
            }
            let mut out = vec![("diagnostics.csv", t.render(hash)), ("density_deviation.csv", dev.render(hash))];
            if config.write_fields {
                let st = traj.final_state();
                out.push(("density.csv", field_dump(&mesh, &[("value", &st.rho)], hash)));
                out.push((
                    "velocity.csv",
                    field_dump(&mesh, &[("value", st.u.x()), ("value_y", st.u.y())], hash),
                ));
            }
            write_run_files(&dir, &rel_dir, out, &mut files)?;
            Ok((RunData::Comp(Box::new(run)), files))
        }
        RunSpec::Incomp { k } => {
            let mesh = unit_mesh(k)?;
            let ic = config.incomp_config();
            let traj = incomp::run_incomp(&mesh, &ic, cases::shear_limit_velocity())?;
            let d = &traj.diagnostics;
            let run = IncompRun {
                k,
                steps: d.len(),
                min_dt: traj.min_dt(),
                max_div_residual: d.iter().map(|s| s.div_residual).fold(0.0, f64::max),
                energy_violations: d.iter().filter(|s| !s.energy_ok).count(),
                global_violations: d.iter().filter(|s| !s.global_ok).count(),
                pressure_failures: d.iter().filter(|s| !s.pressure_converged).count(),
                final_state: traj.final_state().clone(),
            };
            let init = &traj.snapshots[0];
            let mut t = Table::new(&["step", "t", "dt", "kinetic_energy", "div_residual", "pressure_iters", "energy_ok"]);
            t.row(vec![
                "0".into(),
                f(0.0),
                f(0.0),
                f(traj.initial_energy),
                f(ops::div_primal(&mesh, &init.v).max_abs()),
                "0".into(),
                "true".into(),
            ]);
            for s in d {
                t.row(vec![
                    s.step.to_string(),
                    f(s.t),
                    f(s.dt),
                    f(s.kinetic_energy),
                    f(s.div_residual),
                    s.pressure_iters.to_string(),
                    s.energy_ok.to_string(),
                ]);
            }
            let mut out = vec![("diagnostics.csv", t.render(hash))];
            if config.write_fields {
                let st = traj.final_state();
                out.push((
                    "velocity.csv",
                    field_dump(&mesh, &[("value", st.v.x()), ("value_y", st.v.y())], hash),
                ));
                out.push(("pressure.csv", field_dump(&mesh, &[("value", &st.pi)], hash)));
            }
            write_run_files(&dir, &rel_dir, out, &mut files)?;
            Ok((RunData::Incomp(Box::new(run)), files))
        }
    }
}

fn write_run_files(dir: &Path, rel: &Path, out: Vec<(&str, String)>, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in out {
        atomic_write(&dir.join(name), &text)?;
        files.push(rel.join(name));
    }
    Ok(())
}

/// Formats with 17 significant digits.
fn f(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self, hash: &str) -> String {
        let mut s = format!("# config_sha256={hash}\n");
        s.push_str(&self.header.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Row-major dump `i,j,x,y,<columns>` of cell fields.
pub fn field_dump(mesh: &Mesh, columns: &[(&str, &CellScalar)], hash: &str) -> String {
    let mut t = Table::new(&["i", "j", "x", "y"]);
    t.header.extend(columns.iter().map(|(n, _)| n.to_string()));
    for (c, cell) in mesh.cells().iter().enumerate() {
        let (i, j) = mesh.cell_ij(c);
        let mut row = vec![i.to_string(), j.to_string(), f(cell.center[0]), f(cell.center[1])];
        row.extend(columns.iter().map(|(_, v)| f(v[c])));
        t.row(row);
    }
    t.render(hash)
}

/// Writes `text` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Groups failures by kind for a compact log line.
pub fn failure_summary(report: &StudyReport) -> String {
    let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &report.failures {
        let kind = if f.label.starts_with("comp") { "comp" } else { "incomp" };
        *by_kind.entry(kind).or_default() += 1;
    }
    by_kind
        .iter()
        .map(|(k, n)| format!("{n} {k} run(s) failed"))
        .collect::<Vec<_>>()
        .join(", ")
}
