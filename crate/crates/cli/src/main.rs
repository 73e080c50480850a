use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use sfrd::app::{dispatch, Command};
use sfrd::config::{Profile, RunConfig};
use sfrd::montecarlo::{worker_count, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "sfrd", version, about = "Stochastic fractional reaction-diffusion lab")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Flat TOML config (`model.delta = 7`, ...); every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides `ensemble.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Scale preset applied before the config file.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Run one ensemble and write per-realization rows and statistics.
    Simulate,
    /// Run one ensemble per value of `sweep.axis`.
    Sweep,
    /// Evaluate blow-up-time and probability bounds on sampled paths.
    Bounds,
    /// Covariance and normality diagnostics of the fBm sampler.
    FbmTest,
    /// Calibration, comparison, transform and Gamma-identity checks.
    Validate,
}

#[derive(ValueEnum, Clone, Copy)]
enum ProfileArg {
    Desk,
    Full,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let profile = match cli.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Full => Profile::Full,
    };
    let base = RunConfig::with_profile(profile);
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse_onto(base, &text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => base,
    };
    if let Some(dir) = cli.out {
        cfg.output.dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.ensemble.master_seed = seed;
    }
    let workers = worker_count();
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .with_context(|| format!("starting {workers} workers ({WORKERS_ENV})"))?;
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Sweep => Command::Sweep,
        Cmd::Bounds => Command::Bounds,
        Cmd::FbmTest => Command::FbmTest,
        Cmd::Validate => Command::Validate,
    };
    let report = dispatch(command, &cfg)?;
    for a in &report.artifacts {
        println!("wrote {}", a.display());
    }
    for f in &report.failures {
        eprintln!("FAILED: {f}");
    }
    Ok(report.success())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
