//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! when any criterion fails.

mod support;

use std::process::ExitCode;
use std::time::Instant;

use apeuler_core::analysis;
use apeuler_core::harness::{self, ExperimentConfig, Mode, StudyReport};
use apeuler_core::ops::{self, EdgeSplit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS_ALL: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];

/// Reference `||u_eps(T) - v(T)||_{L1}` on 128^2 for `EPS_ALL`.
const VEL_DIFF_REFERENCE: [f64; 5] = [9.49e-1, 3.15e-2, 8.72e-4, 8.13e-4, 7.96e-4];

const DUALITY_RTOL: f64 = 1e-12;
const MASS_RTOL: f64 = 1e-10;
const DT_SPREAD_MAX: f64 = 3.0;
const DEVIATION_FACTOR: f64 = 10.0;
const DECADE_RATIO: (f64, f64) = (50.0, 200.0);
const VEL_DIFF_FACTOR: f64 = 3.0;
const EOC_RANGE: (f64, f64) = (0.75, 1.1);
const DIV_RESIDUAL_MAX: f64 = 1e-9;
const COMP_DIV_MAX: f64 = 1e-3;
const W1_TOL: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn study(mode: Mode, grids: &[usize], reference: usize, eps: &[f64], dir: &std::path::Path) -> StudyReport {
    let config = ExperimentConfig {
        mode,
        grids: grids.to_vec(),
        eps: eps.to_vec(),
        reference_grid: reference,
        out_dir: dir.to_path_buf(),
        write_fields: false,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let report = harness::run_experiment(&config).expect("study configuration is valid");
    println!(
        "  ran {mode} on {grids:?} + {reference} for eps {eps:?} in {:.1} s",
        start.elapsed().as_secs_f64()
    );
    for f in &report.failures {
        println!("  run {} failed: {}", f.label, f.message);
    }
    report
}

fn operator_identities() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in [4, 16, 64, 128] {
        let m = support::mesh(k);
        for _ in 0..100 {
            let q = support::random_scalar(&m, &mut rng);
            let w = support::random_vector(&m, &mut rng);
            let div = ops::div_primal(&m, &w);
            let grad = ops::grad_primal(&m, &q);
            let (mut sum, mut scale) = (0.0, 0.0);
            for (c, cell) in m.cells().iter().enumerate() {
                let [gx, gy] = grad.get(c);
                let [wx, wy] = w.get(c);
                let a = q[c] * div[c];
                let b = gx * wx + gy * wy;
                sum += cell.measure * (a + b);
                scale += cell.measure * (a.abs() + b.abs());
            }
            worst = worst.max(sum.abs() / scale);
        }
    }
    let mut antisymmetric = true;
    for _ in 0..100_000 {
        let split = EdgeSplit::stabilized(&[rng.random_range(-1.0..1.0)], &[rng.random_range(-1.0..1.0)]);
        let (qk, ql, s) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.01..1.0));
        let fk = ops::upwind_mass_flux(qk, ql, split.plus[0], split.minus[0], s).unwrap();
        let fl = ops::upwind_mass_flux(ql, qk, -split.minus[0], -split.plus[0], s).unwrap();
        antisymmetric &= fk == -fl;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= DUALITY_RTOL && antisymmetric && secs < 10.0,
        format!("max duality defect {worst:.2e}, flux antisymmetry exact: {antisymmetric}, {secs:.2} s"),
    )
}

fn conservation(a: &StudyReport) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rho_min = f64::INFINITY;
    let mut count = 0;
    let mut missing = 0;
    for k in [32, 64, 128] {
        for eps in [1.0, 1e-2, 1e-4] {
            match a.comp(k, eps) {
                Some(r) => {
                    worst = worst.max(r.max_mass_change);
                    rho_min = rho_min.min(r.rho_min);
                    count += 1;
                }
                None => missing += 1,
            }
        }
    }
    verdict(
        missing == 0 && worst <= MASS_RTOL && rho_min > 0.0,
        format!("{count} runs, max relative mass change per step {worst:.2e}, min density {rho_min:.6}"),
    )
}

fn energy_stability(a: &StudyReport, b: &[&StudyReport]) -> Verdict {
    let comp_bad: usize = a
        .comp_runs
        .iter()
        .map(|r| r.energy_violations + r.entropy_violations + r.global_violations)
        .sum();
    let comp_steps: usize = a.comp_runs.iter().map(|r| r.steps).sum();
    let incomp: Vec<_> = b.iter().flat_map(|r| &r.incomp_runs).collect();
    let incomp_bad: usize = incomp.iter().map(|r| r.energy_violations + r.global_violations).sum();
    let incomp_steps: usize = incomp.iter().map(|r| r.steps).sum();
    let failures = a.failures.len() + b.iter().map(|r| r.failures.len()).sum::<usize>();
    verdict(
        comp_bad == 0 && incomp_bad == 0 && failures == 0,
        format!(
            "{} compressible runs / {comp_steps} steps with {comp_bad} violations; {} limit runs / {incomp_steps} steps with {incomp_bad} violations",
            a.comp_runs.len(),
            incomp.len()
        ),
    )
}

fn timestep_independence(a: &StudyReport) -> Verdict {
    let dts: Vec<f64> = EPS_ALL
        .iter()
        .filter_map(|&e| a.comp(64, e).and_then(|r| r.min_dt))
        .collect();
    if dts.len() != EPS_ALL.len() {
        return verdict(false, "missing 64^2 runs");
    }
    let spread = dts.iter().cloned().fold(0.0, f64::max) / dts.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        spread < DT_SPREAD_MAX,
        format!("min dt on 64^2: [{}], spread factor {spread:.3}", fmt_list(&dts)),
    )
}

fn density_asymptotics(a: &StudyReport) -> Verdict {
    let eps = &EPS_ALL[1..];
    let sups: Vec<f64> = eps.iter().filter_map(|&e| a.comp(128, e).map(|r| r.deviation_sup)).collect();
    if sups.len() != eps.len() {
        return verdict(false, "missing 128^2 runs");
    }
    let bounded = sups.iter().zip(eps).all(|(s, e)| *s <= DEVIATION_FACTOR * e * e);
    let ratios: Vec<f64> = sups.windows(2).map(|w| w[0] / w[1]).collect();
    let in_range = ratios.iter().all(|r| (DECADE_RATIO.0..=DECADE_RATIO.1).contains(r));
    let scaled: Vec<f64> = sups.iter().zip(eps).map(|(s, e)| s / (e * e)).collect();
    verdict(
        bounded && in_range,
        format!(
            "sup ||rho-1||_L2 / eps^2 = [{}], decade ratios [{}]",
            fmt_list(&scaled),
            fmt_list(&ratios)
        ),
    )
}

fn scheme_limit(a: &StudyReport) -> Verdict {
    let diffs: Vec<f64> = EPS_ALL
        .iter()
        .filter_map(|&e| a.velocity_difference.iter().find(|r| r.0 == 128 && r.1 == e).map(|r| r.2))
        .collect();
    if diffs.len() != EPS_ALL.len() {
        return verdict(false, "missing 128^2 runs");
    }
    let decreasing = strictly_decreasing(&diffs);
    let ratios: Vec<f64> = diffs.iter().zip(VEL_DIFF_REFERENCE).map(|(d, r)| d / r).collect();
    let close = ratios.iter().all(|r| (1.0 / VEL_DIFF_FACTOR..=VEL_DIFF_FACTOR).contains(r));
    verdict(
        decreasing && close,
        format!(
            "||u-v||_L1 on 128^2 = [{}], strictly decreasing: {decreasing}, ratio to reference [{}]",
            fmt_list(&diffs),
            fmt_list(&ratios)
        ),
    )
}

fn e_columns(t: &harness::ConvergenceTable) -> [Vec<f64>; 4] {
    [
        t.rows.iter().map(|r| r.errors.e1).collect(),
        t.rows.iter().map(|r| r.errors.e2).collect(),
        t.rows.iter().map(|r| r.errors.e3).collect(),
        t.rows.iter().map(|r| r.errors.e4).collect(),
    ]
}

fn mesh_convergence(a: &StudyReport, b: &StudyReport) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let tables = [
        ("eps=1", a.table("comp", Some(1.0), "all")),
        ("eps=1e-2", a.table("comp", Some(1e-2), "all")),
        ("limit", b.table("incomp", None, "velocity")),
    ];
    for (name, table) in tables {
        let Some(t) = table else {
            pass = false;
            parts.push(format!("{name}: missing"));
            continue;
        };
        let cols = e_columns(t);
        let ok = cols.iter().all(|c| strictly_decreasing(c));
        pass &= ok;
        let e1 = &cols[0];
        let e4 = &cols[3];
        parts.push(format!("{name}: E1 [{}] E4 [{}] {}", fmt_list(e1), fmt_list(e4), if ok { "ok" } else { "not monotone" }));
    }
    verdict(pass, parts.join("; "))
}

fn incompressible_eoc(b: &StudyReport) -> Verdict {
    let rates: Vec<f64> = b.eoc.iter().filter_map(|r| r.eoc).collect();
    let errors: Vec<f64> = b.eoc.iter().map(|r| r.error_l2).collect();
    let rel: Vec<f64> = b.rel_energy_incomp.iter().map(|r| r.1).collect();
    if rates.len() < 2 {
        return verdict(false, "EOC table incomplete");
    }
    let last = &rates[rates.len() - 2..];
    let in_range = last.iter().all(|r| (EOC_RANGE.0..=EOC_RANGE.1).contains(r));
    let rel_ok = strictly_decreasing(&rel);
    verdict(
        in_range && rel_ok,
        format!(
            "L2 errors [{}], EOC [{}], relative energy [{}]",
            fmt_list(&errors),
            rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", "),
            fmt_list(&rel)
        ),
    )
}

fn cross_relative_energy(b: &StudyReport) -> Verdict {
    let e: Vec<f64> = b.rel_energy_cross.iter().map(|r| r.1).collect();
    verdict(
        e.len() == EPS_ALL.len() && strictly_decreasing(&e),
        format!("E_rel(rho, m | 1, V) on 128^2 = [{}]", fmt_list(&e)),
    )
}

fn divergence(a: &StudyReport, b: &[&StudyReport]) -> Verdict {
    let residual = b
        .iter()
        .flat_map(|r| &r.incomp_runs)
        .chain(&a.incomp_runs)
        .map(|r| r.max_div_residual)
        .fold(0.0, f64::max);
    let div: Vec<f64> = EPS_ALL
        .iter()
        .filter_map(|&e| a.divergence.iter().find(|r| r.0 == 256 && r.1 == e).map(|r| r.2))
        .collect();
    if div.len() != EPS_ALL.len() {
        return verdict(false, "missing 256^2 runs");
    }
    let monotone = div.windows(2).all(|w| w[1] <= w[0]);
    let small = div[EPS_ALL.len() - 1] <= COMP_DIV_MAX;
    verdict(
        residual <= DIV_RESIDUAL_MAX && monotone && small,
        format!(
            "max constraint residual {residual:.2e}; max |div u| on 256^2 = [{}]",
            fmt_list(&div)
        ),
    )
}

fn w1_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = analysis::w1_empirical(&a, &b).unwrap();
        worst = worst.max((fast - support::w1_brute_force(&a, &b)).abs());
    }
    verdict(
        worst <= W1_TOL,
        format!("1000 trials, max deviation {worst:.2e}, {:.2} s", start.elapsed().as_secs_f64()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("temporary directory");
    println!("acceptance: running case studies");
    let a = study(Mode::AsymptoticStudy, &[32, 64, 128], 256, &EPS_ALL, &dir.path().join("a"));
    let b = study(Mode::ConvergenceStudy, &[32, 64, 128], 256, &EPS_ALL, &dir.path().join("b"));
    let b_eoc = study(Mode::ConvergenceStudy, &[32, 64, 128, 256], 512, &[], &dir.path().join("b_eoc"));

    let results = [
        ("operator identities", operator_identities()),
        ("conservation and positivity", conservation(&a)),
        ("energy stability", energy_stability(&a, &[&b, &b_eoc])),
        ("timestep independence of eps", timestep_independence(&a)),
        ("density asymptotics", density_asymptotics(&a)),
        ("scheme-to-scheme limit", scheme_limit(&a)),
        ("mesh convergence", mesh_convergence(&a, &b)),
        ("incompressible EOC", incompressible_eoc(&b_eoc)),
        ("cross-scheme relative energy", cross_relative_energy(&b)),
        ("divergence residual", divergence(&a, &[&b, &b_eoc])),
        ("W1 oracle", w1_oracle()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("{tag} {:>2}. {name}: {}", i + 1, v.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
