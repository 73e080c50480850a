//! Command dispatch and artifact output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bounds::{bounds_report, exponential_functional_quantiles, BoundsOptions, BOUNDS_CSV_HEADER};
use crate::config::{Format, RunConfig};
use crate::diagnostics::fbm_diagnostics;
use crate::error::{Error, Result};
use crate::gamma::regularized_gamma_p;
use crate::model::{GridSpec, ModelParams};
use crate::montecarlo::{
    parameter_sweep, pathwise_comparison_test, run_ensemble_on, transform_convergence, write_sweep_csv, Setup,
    SweepAxis, SweepRow,
};
use crate::operator::{build_fd_matrix, default_rho, principal_eigenpair, semigroup_sup_norm_profile, DEFAULT_EIGEN_TOL};
use crate::presets::REFERENCE_LAMBDA1;
use crate::seeding::derive_seed;
use crate::simulator::{simulate_realization, Trajectory};

/// Name of the manifest written when a command does not fully succeed.
pub const FAILURE_MANIFEST: &str = "FAILED.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Sweep,
    Bounds,
    FbmTest,
    Validate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Bounds => "bounds",
            Command::FbmTest => "fbm-test",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DispatchReport {
    pub artifacts: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl DispatchReport {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    failures: &'a [String],
    artifacts: Vec<String>,
}

struct Out<'a> {
    dir: &'a Path,
    report: DispatchReport,
}

impl Out<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.report.artifacts.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn plot(&mut self, name: &str, artifact: &PlotArtifact) -> Result<()> {
        let path = self.dir.join(name);
        emit_plot_data(artifact, &path)?;
        self.report.artifacts.push(path);
        Ok(())
    }

    fn fail(&mut self, what: impl Into<String>) {
        let what = what.into();
        log::error!("{what}");
        self.report.failures.push(what);
    }
}

/// Run `command` with `cfg`, writing artifacts into `cfg.output.dir`.
///
/// Failed checks are returned in the report; hard errors abort. Either way a
/// failure manifest lists what was written.
pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<DispatchReport> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(FAILURE_MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let mut out = Out { dir, report: DispatchReport::default() };
    let result = out.write("config.toml", cfg.to_document().as_bytes()).and_then(|_| match command {
        Command::Simulate => simulate(cfg, &mut out),
        Command::Sweep => sweep(cfg, &mut out),
        Command::Bounds => bounds(cfg, &mut out),
        Command::FbmTest => fbm_test(cfg, &mut out),
        Command::Validate => validate(cfg, &mut out),
    });
    if let Err(e) = &result {
        out.fail(format!("aborted: {e}"));
    }
    if !out.report.failures.is_empty() {
        let m = Manifest {
            command: command.as_str(),
            failures: &out.report.failures,
            artifacts: out
                .report
                .artifacts
                .iter()
                .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
                .collect(),
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    }
    result.map(|_| out.report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn simulate(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic)?;
    let ens = run_ensemble_on(&setup, cfg.ensemble.n_realizations, cfg.ensemble.master_seed)?;
    if cfg.output.wants(Format::Csv) {
        let mut buf = Vec::new();
        ens.write_rows_csv(&mut buf)?;
        out.write("realizations.csv", &buf)?;
        let s = &ens.stats;
        let text = format!(
            "p_hat,se_phat,mean_tau,var_tau,n_blowup,n_realizations,master_seed\n{:?},{:?},{},{},{},{},{}\n",
            s.p_hat,
            s.se_phat,
            fmt_opt(s.mean_tau),
            fmt_opt(s.var_tau),
            s.n_blowup,
            s.n_realizations,
            s.master_seed
        );
        out.write("stats.csv", text.as_bytes())?;
    }
    if cfg.output.wants(Format::Json) {
        out.json("realizations.json", &ens.rows)?;
        out.json("stats.json", &ens.stats)?;
    }
    if let Some(stride) = cfg.output.trajectory_stride {
        let seed = derive_seed(cfg.ensemble.master_seed, 0);
        let path = setup.sampler()?.sample(seed);
        let r = simulate_realization(&setup.params, &setup.grid, &setup.solver, &path, &setup.f, Some(stride))?;
        let traj = r.trajectory.expect("stride requested");
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).map_err(|e| Error::io(out.dir.join("trajectory.csv"), e))?;
        out.write("trajectory.csv", &buf)?;
        let times: Vec<f64> = (0..r.record.sup_history.len()).map(|n| n as f64 * cfg.grid.dt()).collect();
        out.plot("sup_history.dat", &PlotArtifact::SupHistory { times: &times, sup: &r.record.sup_history })?;
        out.plot("field.dat", &PlotArtifact::Field { trajectory: &traj, stride: 1 })?;
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::Config {
        key: "sweep.axis".into(),
        reason: "the sweep command needs sweep.axis and sweep.values".into(),
    })?;
    let rows = parameter_sweep(
        &cfg.model,
        &cfg.grid,
        &cfg.ic,
        sw.axis,
        &sw.values,
        cfg.ensemble.n_realizations,
        cfg.ensemble.master_seed,
    )?;
    for r in &rows {
        if let Err(e) = &r.result {
            out.fail(format!("sweep row {}={:?}: {e}", sw.axis.as_str(), r.axis_value));
        }
    }
    let stem = format!("sweep_{}", sw.axis.as_str());
    if cfg.output.wants(Format::Csv) {
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).map_err(|e| Error::io(out.dir.join(&stem), e))?;
        out.write(&format!("{stem}.csv"), &buf)?;
    }
    if cfg.output.wants(Format::Json) {
        #[derive(Serialize)]
        struct Row<'a> {
            axis_value: f64,
            stats: Option<&'a crate::montecarlo::EnsembleStats>,
            error: Option<&'a str>,
        }
        let json: Vec<Row> = rows
            .iter()
            .map(|r| Row {
                axis_value: r.axis_value,
                stats: r.result.as_ref().ok(),
                error: r.result.as_ref().err().map(|s| s.as_str()),
            })
            .collect();
        out.json(&format!("{stem}.json"), &json)?;
    }
    out.plot(&format!("{stem}.dat"), &PlotArtifact::Sweep { axis: sw.axis, rows: &rows })
}

fn bounds(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic)?;
    let profile = semigroup_sup_norm_profile(&setup.op, cfg.model.gamma, &cfg.grid.times())?;
    let sampler = setup.sampler()?;
    let master = cfg.ensemble.master_seed;
    let opts = BoundsOptions {
        b: cfg.bounds.b,
        alpha1: cfg.bounds.alpha1_for(cfg.model.hurst),
        nh_paths: cfg.bounds.n_paths,
        t_sup: cfg.bounds.t_sup,
        nh_steps: cfg.bounds.nh_steps,
        t_cut: cfg.bounds.t_cut,
        seed: derive_seed(master, u64::MAX - 1),
    };
    let mut csv = format!("{BOUNDS_CSV_HEADER}\n");
    for i in 0..cfg.bounds.n_reports as u64 {
        let path = sampler.sample(derive_seed(master, i));
        let report = bounds_report(&cfg.model, &cfg.grid, &setup.eig, &profile, &path, &setup.f, &opts)?;
        if cfg.output.wants(Format::Json) {
            out.json(&format!("bounds_{i}.json"), &report)?;
        }
        csv.push_str(&report.csv_row());
        csv.push('\n');
    }
    if cfg.output.wants(Format::Csv) {
        out.write("bounds.csv", csv.as_bytes())?;
    }
    Ok(())
}

fn fbm_test(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let d = fbm_diagnostics(
        cfg.model.hurst,
        cfg.grid.t_final,
        cfg.grid.n,
        cfg.ensemble.n_realizations,
        cfg.ensemble.master_seed,
    )?;
    if !d.variance_ok {
        out.fail(format!("terminal variance {} is {:.2} SE from {}", d.var_terminal, d.var_z, d.var_expected));
    }
    if !d.correlation_ok {
        out.fail(format!("lag-1 increment correlation {} outside ±{}", d.lag1_corr, d.lag1_band));
    }
    if cfg.output.wants(Format::Json) {
        out.json("fbm_diagnostics.json", &d)?;
    }
    if cfg.output.wants(Format::Csv) {
        let mut text = String::from("lag,empirical,exact\n");
        for l in &d.autocovariance {
            text.push_str(&format!("{},{:?},{:?}\n", l.lag, l.empirical, l.exact));
        }
        out.write("fbm_autocovariance.csv", text.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub item: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

/// Seeds used by the comparison and transform checks.
const VALIDATE_SEEDS: u64 = 5;

/// The invariant suite run by the `validate` command.
pub fn validation_suite(cfg: &RunConfig) -> Result<Vec<CheckItem>> {
    let mut items = Vec::new();
    let master = cfg.ensemble.master_seed;

    let m = cfg.grid.m;
    let op = build_fd_matrix(1.2, m, default_rho(1.2))?;
    let eig = principal_eigenpair(&op, DEFAULT_EIGEN_TOL)?;
    items.push(CheckItem {
        item: "calibration".into(),
        passed: (eig.lambda1 - REFERENCE_LAMBDA1).abs() <= 0.01,
        value: eig.lambda1,
        detail: format!("lambda1 at alpha = 1.2, M = {m}; expected {REFERENCE_LAMBDA1} +/- 0.01"),
    });

    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic)?;
    let low: Vec<f64> = setup.f.iter().map(|v| 0.5 * v).collect();
    let mut worst = 0.0f64;
    for i in 0..VALIDATE_SEEDS {
        let c = pathwise_comparison_test(&setup, derive_seed(master, i), &low, &setup.f)?;
        worst = worst.max(c.relative);
    }
    items.push(CheckItem {
        item: "comparison".into(),
        passed: worst <= 1e-6,
        value: worst,
        detail: format!("max relative ordering violation over {VALIDATE_SEEDS} paths, f_low = f/2"),
    });

    let params = ModelParams { sigma: 0.1, hurst: 0.6, ..cfg.model.clone() };
    let window = 0.2;
    let n = ((window / cfg.grid.dt()).round() as usize).max(2);
    let grid = GridSpec { n, t_final: window, ..cfg.grid.clone() };
    let mut min_ratio = f64::INFINITY;
    for i in 0..VALIDATE_SEEDS {
        let c = transform_convergence(&params, &grid, &cfg.ic, derive_seed(master, i))?;
        min_ratio = min_ratio.min(c.ratio);
    }
    items.push(CheckItem {
        item: "transform_equivalence".into(),
        passed: min_ratio >= 1.5,
        value: min_ratio,
        detail: format!("min discrepancy reduction under (dt, dx) halving on [0, {window}], {VALIDATE_SEEDS} paths; need >= 1.5"),
    });

    let mut gap = 0.0f64;
    for &x in &[0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
        gap = gap.max((regularized_gamma_p(1.0, x)? - (1.0 - (-x as f64).exp())).abs());
        gap = gap.max((regularized_gamma_p(0.5, x * x)? - statrs::function::erf::erf(x)).abs());
    }
    items.push(CheckItem {
        item: "gamma_closed_forms".into(),
        passed: gap <= 1e-10,
        value: gap,
        detail: "max |P(1,x) - (1 - e^-x)| and |P(1/2,x^2) - erf(x)|".into(),
    });

    let rows = exponential_functional_quantiles(1.0, &[0.1, 0.25, 0.5, 0.75, 0.9], 10_000, 1.0 / 256.0, master)?;
    let worst_z = rows
        .iter()
        .map(|r| (r.empirical - r.exact).abs() / r.bootstrap_se)
        .fold(0.0, f64::max);
    items.push(CheckItem {
        item: "gamma_identity".into(),
        passed: worst_z <= 3.0,
        value: worst_z,
        detail: "max |empirical - exact| / bootstrap SE over quantiles of the exponential functional".into(),
    });
    Ok(items)
}

fn validate(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let items = validation_suite(cfg)?;
    for it in items.iter().filter(|i| !i.passed) {
        out.fail(format!("{}: {} ({})", it.item, it.value, it.detail));
    }
    if cfg.output.wants(Format::Json) {
        out.json("validate.json", &items)?;
    }
    if cfg.output.wants(Format::Csv) {
        let mut text = String::from("item,passed,value\n");
        for it in &items {
            text.push_str(&format!("{},{},{:?}\n", it.item, it.passed, it.value));
        }
        out.write("validate.csv", text.as_bytes())?;
    }
    Ok(())
}

/// Data that [`emit_plot_data`] can write.
#[derive(Debug, Clone, Copy)]
pub enum PlotArtifact<'a> {
    /// `(t, sup)` pairs.
    SupHistory { times: &'a [f64], sup: &'a [f64] },
    /// `(t, x, u)` triples from every `stride`-th snapshot.
    Field { trajectory: &'a Trajectory, stride: usize },
    /// One line per successful sweep row.
    Sweep { axis: SweepAxis, rows: &'a [SweepRow] },
}

/// Whitespace-separated columns under a `#` header naming them.
pub fn emit_plot_data(artifact: &PlotArtifact, target: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let io = |e| Error::io(target, e);
    match artifact {
        PlotArtifact::SupHistory { times, sup } => {
            if times.len() != sup.len() {
                return Err(Error::param("sup", "length differs from times"));
            }
            writeln!(buf, "# t sup").map_err(io)?;
            for (t, s) in times.iter().zip(sup.iter()) {
                writeln!(buf, "{t:?} {s:?}").map_err(io)?;
            }
        }
        PlotArtifact::Field { trajectory, stride } => {
            if *stride == 0 {
                return Err(Error::param("stride", "must be at least 1"));
            }
            writeln!(buf, "# t x u").map_err(io)?;
            for (t, u) in trajectory.times.iter().zip(&trajectory.fields).step_by(*stride) {
                for (x, v) in trajectory.nodes.iter().zip(u) {
                    writeln!(buf, "{t:?} {x:?} {v:?}").map_err(io)?;
                }
                writeln!(buf).map_err(io)?;
            }
        }
        PlotArtifact::Sweep { axis, rows } => {
            writeln!(buf, "# {} p_hat se_phat mean_tau var_tau", axis.as_str()).map_err(io)?;
            for r in rows.iter() {
                if let Ok(s) = &r.result {
                    let nan = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "nan".into());
                    writeln!(
                        buf,
                        "{:?} {:?} {:?} {} {}",
                        r.axis_value,
                        s.p_hat,
                        s.se_phat,
                        nan(s.mean_tau),
                        nan(s.var_tau)
                    )
                    .map_err(io)?;
                }
            }
        }
    }
    fs::write(target, buf).map_err(|e| Error::io(target, e))
}
