use std::path::PathBuf;
use std::process::ExitCode;

use apeuler_core::harness::{self, ExperimentConfig, Mode};
use apeuler_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "apeuler", version, about = "Low Mach number Euler experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// compressible | incompressible | convergence_study | asymptotic_study
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated cells per direction, e.g. 32,64,128.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    /// Comma-separated Mach numbers, e.g. 1,1e-1,1e-2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    eps: Option<Vec<f64>>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the sweep (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut config = harness::load_config(path)?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(grids) = &args.grids {
        config.grids = grids.clone();
    }
    if let Some(eps) = &args.eps {
        config.eps = eps.clone();
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> ExitCode {
    if args.print_defaults {
        print!("{}", harness::defaults_toml());
        return ExitCode::SUCCESS;
    }
    let config = match resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if args.print_config {
        print!("{}", config.to_toml_string());
        return ExitCode::SUCCESS;
    }
    log::info!("mode {} writing to {}", config.mode, config.out_dir.display());
    match harness::run_experiment(&config) {
        Ok(report) if report.is_complete() => {
            println!("{} files written to {}", report.files.len(), config.out_dir.display());
            ExitCode::SUCCESS
        }
        Ok(report) => {
            eprintln!("partial failure: {}", harness::failure_summary(&report));
            for f in &report.failures {
                eprintln!("  {}: {}", f.label, f.message);
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
    }
}
