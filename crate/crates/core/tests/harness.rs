use apeuler_core::harness::{self, ExperimentConfig, Mode};
use apeuler_core::Error;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn small(mode: Mode, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        grids: vec![8, 16],
        eps: vec![1.0, 1e-2],
        reference_grid: 32,
        t_final: 0.004,
        outputs: 2,
        out_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn missing_file_is_reported() {
    match harness::load_config("/definitely/not/here.toml") {
        Err(Error::Io { path, message }) => {
            assert!(path.contains("here.toml"));
            assert!(message.contains("No such file"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let err = ExperimentConfig::from_toml_str("gamma = 2.0\nviscosity = 0.1\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("viscosity"), "{msg}");
    assert!(msg.contains("line 2"), "{msg}");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let msg = ExperimentConfig::from_toml_str("mode = \"compressible\"\n\ngrids = [32, 64\n")
        .unwrap_err()
        .to_string();
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn config_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "gamma = 2.0\neps = [0.01]\n").unwrap();
    let c = harness::load_config(&path).unwrap();
    assert_eq!(c.gamma, 2.0);
    assert_eq!(c.eps, vec![0.01]);
    let text = c.to_toml_string();
    assert!(text.contains("gamma = 2.0"));
    assert!(text.contains("eps = [0.01]"));
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
}

#[test]
fn printed_defaults_parse_to_defaults() {
    let parsed = ExperimentConfig::from_toml_str(&harness::defaults_toml()).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
    let with_dt = ExperimentConfig::from_toml_str("dt_max = 1e-4\n").unwrap();
    assert_eq!(with_dt.dt_max, Some(1e-4));
}

#[test]
fn invariant_violations_are_named() {
    let cases = [
        ("grids = [32, 48]", "power-of-two"),
        ("grids = [64, 32]", "strictly increasing"),
        ("grids = []", "grids"),
        ("mode = \"asymptotic_study\"\neps = [1e-2, 1e-1]", "strictly decreasing"),
        ("grids = [32, 64]\nreference_grid = 32", "reference_grid"),
        ("eps = [0.0]", "eps"),
        ("gamma = 1.0", "gamma"),
        ("mode = \"supersonic\"", "mode"),
    ];
    for (text, needle) in cases {
        let msg = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg.contains(needle), "{text}: {msg}");
    }
    assert!(ExperimentConfig::from_toml_str("mode = \"convergence_study\"\neps = []").is_ok());
}

#[test]
fn smallest_sweep_writes_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        grids: vec![32],
        eps: vec![1.0],
        out_dir: dir.path().to_path_buf(),
        t_final: 0.002,
        ..ExperimentConfig::default()
    };
    let report = harness::run_experiment(&config).unwrap();
    assert!(report.is_complete());
    let files: Vec<String> = report.files.iter().map(|p| p.display().to_string()).collect();
    assert_eq!(
        files,
        [
            "config.toml",
            "runs/comp_k32_eps1e0/density.csv",
            "runs/comp_k32_eps1e0/density_deviation.csv",
            "runs/comp_k32_eps1e0/diagnostics.csv",
            "runs/comp_k32_eps1e0/velocity.csv",
            "summary.csv",
        ]
    );
    let diag = fs::read_to_string(dir.path().join("runs/comp_k32_eps1e0/diagnostics.csv")).unwrap();
    let mut lines = diag.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_sha256={}", config.hash()));
    assert_eq!(
        lines.next().unwrap(),
        "step,t,dt,picard_iters,energy,entropy_pi,mass,rho_min,rho_max,stab_dissipation,energy_ok"
    );
    let first = lines.next().unwrap();
    let energy = first.split(',').nth(4).unwrap();
    let mantissa = energy.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{energy}");
    assert!(!diag.contains('\r'));
    let rows = diag.lines().count() - 2;
    assert_eq!(rows, report.comp_runs[0].steps + 1);

    let vel = fs::read_to_string(dir.path().join("runs/comp_k32_eps1e0/velocity.csv")).unwrap();
    assert_eq!(vel.lines().nth(1).unwrap(), "i,j,x,y,value,value_y");
    assert_eq!(vel.lines().count(), 2 + 32 * 32);
    let den = fs::read_to_string(dir.path().join("runs/comp_k32_eps1e0/density.csv")).unwrap();
    assert_eq!(den.lines().nth(1).unwrap(), "i,j,x,y,value");
}

#[test]
fn outputs_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(Mode::AsymptoticStudy, a.path());
    ca.workers = 1;
    let mut cb = small(Mode::AsymptoticStudy, b.path());
    cb.workers = 4;
    assert_eq!(ca.hash(), cb.hash());
    harness::run_experiment(&ca).unwrap();
    harness::run_experiment(&cb).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }
    harness::run_experiment(&ca).unwrap();
    assert_eq!(read_tree(a.path()), ta);
    let mut cc = ca.clone();
    cc.cfl_fraction = 0.5;
    assert_ne!(cc.hash(), ca.hash());
}

#[test]
fn failed_cell_does_not_touch_other_cells() {
    let clean = tempfile::tempdir().unwrap();
    let mixed = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        grids: vec![8],
        t_final: 0.004,
        rho_hi: 1.5,
        ..ExperimentConfig::default()
    };
    let ok_only = ExperimentConfig {
        eps: vec![1e-2],
        out_dir: clean.path().to_path_buf(),
        ..base.clone()
    };
    let both = ExperimentConfig {
        eps: vec![1.0, 1e-2],
        out_dir: mixed.path().to_path_buf(),
        ..base
    };
    assert!(harness::run_experiment(&ok_only).unwrap().is_complete());
    let report = harness::run_experiment(&both).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].label, "comp_k8_eps1e0");
    assert!(report.failures[0].message.contains("window"), "{}", report.failures[0].message);
    assert_eq!(report.comp_runs.len(), 1);
    let failed = fs::read_to_string(mixed.path().join("runs/comp_k8_eps1e0/failed.txt")).unwrap();
    assert!(failed.contains("window"));

    let strip = |text: String| text.lines().skip(1).collect::<Vec<_>>().join("\n");
    for name in ["diagnostics.csv", "density.csv", "velocity.csv", "density_deviation.csv"] {
        let rel = format!("runs/comp_k8_eps1e-2/{name}");
        let a = fs::read_to_string(clean.path().join(&rel)).unwrap();
        let b = fs::read_to_string(mixed.path().join(&rel)).unwrap();
        assert_eq!(strip(a), strip(b), "{rel}");
    }
    let summary = fs::read_to_string(mixed.path().join("summary.csv")).unwrap();
    assert!(summary.contains("comp_k8_eps1e0,comp,8,1.0000000000000000e0,failed"));
}

#[test]
fn asymptotic_study_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(Mode::AsymptoticStudy, dir.path());
    let report = harness::run_case_study_a(&config).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.comp_runs.len(), 6);
    assert_eq!(report.velocity_difference.len(), 6);
    for eps in [1.0, 1e-2] {
        for group in ["density", "momentum", "all"] {
            let t = report.table("comp", Some(eps), group).unwrap();
            assert_eq!(t.rows.iter().map(|r| r.k).collect::<Vec<_>>(), [8, 16]);
            let name = format!("convergence_comp_eps{eps:e}_{group}.csv");
            let text = fs::read_to_string(dir.path().join(name)).unwrap();
            assert_eq!(text.lines().nth(1).unwrap(), "k,h,E1,E2,E3,E4");
        }
    }
    for name in ["density_deviation.csv", "density_deviation_sup.csv", "velocity_difference.csv", "divergence.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let v = |k, e| report.velocity_difference.iter().find(|r| r.0 == k && r.1 == e).unwrap().2;
    assert!(v(16, 1e-2) < v(16, 1.0));
    assert!(harness::run_case_study_b(&config).is_err());
}

#[test]
fn reference_run_in_grid_list_gives_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        reference_grid: 16,
        eps: vec![1.0, 1e-1],
        ..small(Mode::ConvergenceStudy, dir.path())
    };
    let report = harness::run_case_study_b(&config).unwrap();
    assert!(report.is_complete());
    let t = report.table("incomp", None, "velocity").unwrap();
    let last = t.rows.last().unwrap();
    assert_eq!(last.k, 16);
    assert_eq!((last.errors.e1, last.errors.e2, last.errors.e3, last.errors.e4), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(report.rel_energy_incomp.last().unwrap(), &(16, 0.0));
    assert_eq!(report.eoc.len(), 2);
    assert!(report.eoc[0].eoc.is_none() && report.eoc[1].eoc.is_none());
    assert_eq!(report.rel_energy_cross.len(), 2);
    assert!(report.rel_energy_cross[1].1 < report.rel_energy_cross[0].1);
    let eoc = fs::read_to_string(dir.path().join("eoc.csv")).unwrap();
    assert_eq!(eoc.lines().nth(1).unwrap(), "k,error_l2,eoc");
    assert!(eoc.lines().nth(2).unwrap().ends_with(','));
}
