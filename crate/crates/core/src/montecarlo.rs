//! Seeded ensembles, parameter sweeps and pathwise cross-checks.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{FbmPath, FbmSampler};
use crate::model::{GridSpec, ModelParams};
use crate::operator::{build_fd_matrix, principal_eigenpair, EigenPair, FracOperator, DEFAULT_EIGEN_TOL};
use crate::seeding::derive_seed;
use crate::simulator::{
    make_initial_condition, simulate_realization, simulate_transformed, InitialCondition, RealizationRow,
    SemiImplicitSolver, TransformVariant,
};

/// Environment variable read by [`worker_count`].
pub const WORKERS_ENV: &str = "SFRD_WORKERS";

/// Worker count from `SFRD_WORKERS`, defaulting to all cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Consistency(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_realizations: usize,
    pub n_blowup: usize,
    pub p_hat: f64,
    /// Mean of `τ_b` over blow-up realizations.
    pub mean_tau: Option<f64>,
    /// Unbiased variance of `τ_b` over blow-up realizations (0 for a single one).
    pub var_tau: Option<f64>,
    pub se_phat: f64,
    pub master_seed: u64,
}

impl EnsembleStats {
    /// Aggregate rows; the result does not depend on their order.
    pub fn from_rows(rows: &[RealizationRow], master_seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::param("n_realizations", "must be at least 1"));
        }
        let mut taus: Vec<f64> = rows.iter().filter(|r| r.blew_up).filter_map(|r| r.tau_b).collect();
        taus.sort_by(f64::total_cmp);
        let n = rows.len();
        let k = taus.len();
        let p_hat = k as f64 / n as f64;
        let (mean_tau, var_tau) = if k == 0 {
            (None, None)
        } else {
            let m = taus.iter().sum::<f64>() / k as f64;
            let v = if k > 1 {
                taus.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (k - 1) as f64
            } else {
                0.0
            };
            (Some(m), Some(v))
        };
        Ok(Self {
            n_realizations: n,
            n_blowup: k,
            p_hat,
            mean_tau,
            var_tau,
            se_phat: (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
            master_seed,
        })
    }
}

/// Operator, eigenpair, solver and initial data shared by an ensemble.
#[derive(Debug, Clone)]
pub struct Setup {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub op: FracOperator,
    pub eig: EigenPair,
    pub solver: SemiImplicitSolver,
    pub f: Vec<f64>,
}

impl Setup {
    pub fn new(params: &ModelParams, grid: &GridSpec, ic: &InitialCondition) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        let op = build_fd_matrix(params.alpha, grid.m, grid.rho_for(params.alpha))?;
        let eig = principal_eigenpair(&op, DEFAULT_EIGEN_TOL)?;
        let solver = SemiImplicitSolver::new(&op, grid)?;
        let f = make_initial_condition(ic, &eig, grid)?;
        Ok(Self { params: params.clone(), grid: grid.clone(), op, eig, solver, f })
    }

    /// Same operator and solver with different model coefficients.
    pub fn with_params(&self, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if params.alpha != self.params.alpha {
            return Err(Error::param("alpha", "changing alpha needs a fresh setup"));
        }
        Ok(Self { params: params.clone(), ..self.clone() })
    }

    pub fn with_initial(&self, ic: &InitialCondition) -> Result<Self> {
        let f = make_initial_condition(ic, &self.eig, &self.grid)?;
        Ok(Self { f, ..self.clone() })
    }

    pub fn sampler(&self) -> Result<FbmSampler> {
        FbmSampler::new(self.params.hurst, self.grid.t_final, self.grid.n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    /// Ordered by realization index.
    pub rows: Vec<RealizationRow>,
}

/// Per-realization CSV header, in column order.
pub const REALIZATION_CSV_HEADER: [&str; 6] = ["realization_id", "seed", "blew_up", "tau_b", "termination", "sup_final"];

impl Ensemble {
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|e| Error::Consistency(format!("csv flush: {e}")))?;
        Ok(())
    }
}

/// `n_r` realizations, realization `i` driven by `derive_seed(master_seed, i)`.
pub fn run_ensemble_on(setup: &Setup, n_r: usize, master_seed: u64) -> Result<Ensemble> {
    if n_r == 0 {
        return Err(Error::param("n_realizations", "must be at least 1"));
    }
    let sampler = setup.sampler()?;
    let rows = (0..n_r as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i);
            let path = sampler.sample(seed);
            let r = simulate_realization(&setup.params, &setup.grid, &setup.solver, &path, &setup.f, None)?;
            Ok(RealizationRow::new(i, seed, &r.record))
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = EnsembleStats::from_rows(&rows, master_seed)?;
    Ok(Ensemble { stats, rows })
}

pub fn run_ensemble(
    params: &ModelParams,
    grid: &GridSpec,
    ic: &InitialCondition,
    n_r: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    if n_r == 0 {
        return Err(Error::param("n_realizations", "must be at least 1"));
    }
    run_ensemble_on(&Setup::new(params, grid, ic)?, n_r, master_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Q,
    #[serde(alias = "H")]
    Hurst,
    Sigma,
    /// Bump amplitude of the `c(1 − x²) + φ₁` initial data.
    C,
    Alpha,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(Self::Q),
            "H" | "h" | "hurst" => Ok(Self::Hurst),
            "sigma" => Ok(Self::Sigma),
            "c" => Ok(Self::C),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::Config { key: "sweep.axis".into(), reason: format!("unknown axis {other:?}") }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Q => "q",
            Self::Hurst => "H",
            Self::Sigma => "sigma",
            Self::C => "c",
            Self::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub result: std::result::Result<EnsembleStats, String>,
}

/// Sweep CSV header, in column order.
pub const SWEEP_CSV_HEADER: &str = "axis_value,p_hat,se_phat,mean_tau,var_tau,n_blowup,n_realizations,master_seed";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Write sweep rows; failed rows keep their axis value and leave the rest empty.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        match &r.result {
            Ok(s) => writeln!(
                w,
                "{:?},{:?},{:?},{},{},{},{},{}",
                r.axis_value,
                s.p_hat,
                s.se_phat,
                fmt_opt(s.mean_tau),
                fmt_opt(s.var_tau),
                s.n_blowup,
                s.n_realizations,
                s.master_seed
            )?,
            Err(_) => writeln!(w, "{:?},,,,,,,", r.axis_value)?,
        }
    }
    Ok(())
}

/// One ensemble per axis value, in input order. Every row reuses
/// `master_seed`, so rows sharing a sampler see the same paths.
pub fn parameter_sweep(
    params: &ModelParams,
    grid: &GridSpec,
    ic: &InitialCondition,
    axis: SweepAxis,
    values: &[f64],
    n_r: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::param("sweep.values", "must be nonempty"));
    }
    if n_r == 0 {
        return Err(Error::param("n_realizations", "must be at least 1"));
    }
    let base = if axis == SweepAxis::Alpha { None } else { Some(Setup::new(params, grid, ic)?) };
    let rows = values
        .iter()
        .map(|&v| {
            let setup = || -> Result<Setup> {
                let mut p = params.clone();
                match axis {
                    SweepAxis::Q => p.q = v,
                    SweepAxis::Hurst => p.hurst = v,
                    SweepAxis::Sigma => p.sigma = v,
                    SweepAxis::C => {
                        let ic = match ic {
                            InitialCondition::BumpPlusEigen { .. } => InitialCondition::BumpPlusEigen { c: v },
                            _ => return Err(Error::param("ic", "the c axis needs bump_plus_eigen initial data")),
                        };
                        return base.as_ref().unwrap().with_initial(&ic);
                    }
                    SweepAxis::Alpha => {
                        p.alpha = v;
                        return Setup::new(&p, grid, ic);
                    }
                }
                base.as_ref().unwrap().with_params(&p)
            };
            let result = setup()
                .and_then(|s| run_ensemble_on(&s, n_r, master_seed))
                .map(|e| e.stats)
                .map_err(|e| {
                    log::warn!("sweep row {}={v} failed: {e}", axis.as_str());
                    e.to_string()
                });
            SweepRow { axis_value: v, result }
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonOutcome {
    /// `max (u_low − u_high)_+` over nodes and steps.
    pub max_violation: f64,
    /// `max_violation` divided by the largest `‖u_high‖_∞` seen.
    pub relative: f64,
    pub steps_compared: usize,
}

/// Run `f_low` and `f_high` on the same path and measure ordering violations
/// up to the first blow-up of either run.
pub fn pathwise_comparison_test(
    setup: &Setup,
    path_seed: u64,
    f_low: &[f64],
    f_high: &[f64],
) -> Result<ComparisonOutcome> {
    if f_low.len() != f_high.len() {
        return Err(Error::param("f_low", "length differs from f_high"));
    }
    if f_low.iter().zip(f_high).any(|(a, b)| a > b) {
        return Err(Error::param("f_low", "must not exceed f_high"));
    }
    let path = setup.sampler()?.sample(path_seed);
    let run = |f: &[f64]| simulate_realization(&setup.params, &setup.grid, &setup.solver, &path, f, Some(1));
    let lo = run(f_low)?.trajectory.expect("stride requested");
    let hi = run(f_high)?.trajectory.expect("stride requested");
    let steps = lo.fields.len().min(hi.fields.len());
    let mut max_violation = 0.0f64;
    let mut scale = 0.0f64;
    for (ul, uh) in lo.fields.iter().zip(&hi.fields).take(steps) {
        for (a, b) in ul.iter().zip(uh) {
            max_violation = max_violation.max(a - b);
            scale = scale.max(b.abs());
        }
    }
    Ok(ComparisonOutcome {
        max_violation,
        relative: if scale > 0.0 { max_violation / scale } else { max_violation },
        steps_compared: steps,
    })
}

/// Least-squares slope of `ln sup` against `t` over the trailing `window`
/// fraction of the horizon.
pub fn decay_rate_fit(sup_history: &[f64], t_grid: &[f64], window: f64) -> Result<f64> {
    if sup_history.len() != t_grid.len() || t_grid.len() < 2 {
        return Err(Error::param("sup_history", "needs at least two samples aligned with t_grid"));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::param("window", "must lie in (0, 1]"));
    }
    let (t0, t1) = (t_grid[0], *t_grid.last().unwrap());
    let start = t1 - window * (t1 - t0);
    let pts: Vec<(f64, f64)> = t_grid
        .iter()
        .zip(sup_history)
        .filter(|(t, _)| **t >= start - 1e-12 * (t1 - t0).abs())
        .map(|(t, s)| (*t, *s))
        .collect();
    if pts.len() < 2 {
        return Err(Error::param("window", "covers fewer than two samples"));
    }
    if let Some((t, s)) = pts.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(Error::param("sup_history", format!("nonpositive value {s} at t = {t}")));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Max nodal gap between the direct scheme and the transformed scheme on
/// one path, over every step both runs completed.
pub fn transform_discrepancy(setup: &Setup, path: &FbmPath) -> Result<f64> {
    let run_d = simulate_realization(&setup.params, &setup.grid, &setup.solver, path, &setup.f, Some(1))?;
    let run_t = simulate_transformed(
        &setup.params,
        &setup.grid,
        &setup.solver,
        path,
        &setup.f,
        TransformVariant::FbmS1,
        Some(1),
    )?;
    let (d, t) = (run_d.trajectory.expect("stride requested"), run_t.trajectory.expect("stride requested"));
    Ok(d.fields
        .iter()
        .zip(&t.fields)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformConvergence {
    pub seed: u64,
    pub coarse: f64,
    pub fine: f64,
    /// `coarse / fine`.
    pub ratio: f64,
}

/// Discrepancy on `grid` and on the grid with `Δt` and `Δx` halved, driven
/// by one fine path and its even-index restriction.
pub fn transform_convergence(
    params: &ModelParams,
    grid: &GridSpec,
    ic: &InitialCondition,
    seed: u64,
) -> Result<TransformConvergence> {
    let coarse_setup = Setup::new(params, grid, ic)?;
    let fine_grid = grid.refined();
    let fine_setup = Setup::new(params, &fine_grid, ic)?;
    let fine_path = fine_setup.sampler()?.sample(seed);
    let coarse_incs: Vec<f64> = fine_path.increments.chunks(2).map(|c| c.iter().sum()).collect();
    let coarse_path = FbmPath::from_increments(params.hurst, grid.dt(), coarse_incs, seed, fine_path.method);
    let coarse = transform_discrepancy(&coarse_setup, &coarse_path)?;
    let fine = transform_discrepancy(&fine_setup, &fine_path)?;
    Ok(TransformConvergence { seed, coarse, fine, ratio: coarse / fine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Termination;
    use proptest::prelude::*;

    fn row(i: u64, tau: Option<f64>) -> RealizationRow {
        RealizationRow {
            realization_id: i,
            seed: i,
            blew_up: tau.is_some(),
            tau_b: tau,
            termination: if tau.is_some() { Termination::Threshold } else { Termination::Completed },
            sup_final: 1.0,
        }
    }

    #[test]
    fn stats_aggregate() {
        let rows = vec![row(0, Some(0.5)), row(1, None), row(2, Some(0.7)), row(3, None)];
        let s = EnsembleStats::from_rows(&rows, 9).unwrap();
        assert_eq!(s.n_blowup, 2);
        assert_eq!(s.p_hat, 0.5);
        assert!((s.mean_tau.unwrap() - 0.6).abs() < 1e-15);
        assert!((s.var_tau.unwrap() - 0.02).abs() < 1e-15);
        assert!((s.se_phat - 0.25f64.sqrt() / 2.0).abs() < 1e-15);
        let none = EnsembleStats::from_rows(&[row(0, None)], 0).unwrap();
        assert_eq!((none.p_hat, none.mean_tau, none.var_tau), (0.0, None, None));
        let one = EnsembleStats::from_rows(&[row(0, Some(0.3))], 0).unwrap();
        assert_eq!(one.var_tau, Some(0.0));
        assert!(EnsembleStats::from_rows(&[], 0).is_err());
    }

    #[test]
    fn decay_fit_exact_inputs() {
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let s: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        assert!((decay_rate_fit(&s, &t, 0.5).unwrap() + 2.0).abs() < 1e-10);
        assert!(decay_rate_fit(&vec![3.0; t.len()], &t, 1.0).unwrap().abs() < 1e-12);
        let mut bad = s.clone();
        *bad.last_mut().unwrap() = 0.0;
        assert!(decay_rate_fit(&bad, &t, 0.5).is_err());
        assert!(decay_rate_fit(&s, &t, 0.0).is_err());
    }

    #[test]
    fn axis_names_round_trip() {
        for a in [SweepAxis::Q, SweepAxis::Hurst, SweepAxis::Sigma, SweepAxis::C, SweepAxis::Alpha] {
            assert_eq!(SweepAxis::parse(a.as_str()).unwrap(), a);
        }
        assert!(SweepAxis::parse("beta").is_err());
    }

    fn small() -> (ModelParams, GridSpec) {
        (ModelParams { delta: 7.0, ..ModelParams::default() }, GridSpec::new(21, 100, 1.0))
    }

    #[test]
    fn ensemble_is_deterministic_and_schedule_free() {
        let (p, g) = small();
        let ic = InitialCondition::BumpPlusEigen { c: 0.01 };
        let a = with_workers(1, || run_ensemble(&p, &g, &ic, 12, 5)).unwrap().unwrap();
        let b = with_workers(3, || run_ensemble(&p, &g, &ic, 12, 5)).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 12);
        assert!(a.rows.iter().enumerate().all(|(i, r)| r.realization_id == i as u64));
        assert!(run_ensemble(&p, &g, &ic, 0, 5).is_err());
        let mut buf = Vec::new();
        a.write_rows_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&REALIZATION_CSV_HEADER.join(",")));
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn sweep_keeps_order_and_records_failures() {
        let (p, g) = small();
        let ic = InitialCondition::BumpPlusEigen { c: 0.01 };
        let rows = parameter_sweep(&p, &g, &ic, SweepAxis::Hurst, &[0.7, 1.5, 0.5], 4, 1).unwrap();
        assert_eq!(rows.iter().map(|r| r.axis_value).collect::<Vec<_>>(), vec![0.7, 1.5, 0.5]);
        assert!(rows[0].result.is_ok() && rows[1].result.is_err() && rows[2].result.is_ok());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_CSV_HEADER);
        assert_eq!(text.lines().nth(2).unwrap(), "1.5,,,,,,,");
        let alpha = parameter_sweep(&p, &g, &ic, SweepAxis::Alpha, &[1.2, 1.6], 2, 1).unwrap();
        assert!(alpha.iter().all(|r| r.result.is_ok()));
        assert!(parameter_sweep(&p, &g, &ic, SweepAxis::Q, &[], 2, 1).is_err());
        let pure = InitialCondition::PureEigen;
        let c = parameter_sweep(&p, &g, &pure, SweepAxis::C, &[1.0], 2, 1).unwrap();
        assert!(c[0].result.is_err());
    }

    #[test]
    fn comparison_trivial_cases() {
        let (p, g) = small();
        let setup = Setup::new(&p, &g, &InitialCondition::BumpPlusEigen { c: 0.01 }).unwrap();
        let f = setup.f.clone();
        assert_eq!(pathwise_comparison_test(&setup, 3, &f, &f).unwrap().max_violation, 0.0);
        let zero = vec![0.0; f.len()];
        assert_eq!(pathwise_comparison_test(&setup, 3, &zero, &f).unwrap().max_violation, 0.0);
        assert!(pathwise_comparison_test(&setup, 3, &f, &zero).is_err());
    }

    #[test]
    fn transform_gap_vanishes_without_noise() {
        let p = ModelParams { sigma: 0.0, ..ModelParams::default() };
        let g = GridSpec::new(21, 50, 0.2);
        let c = transform_convergence(&p, &g, &InitialCondition::BumpPlusEigen { c: 0.01 }, 1).unwrap();
        assert!(c.coarse < 1e-12 && c.fine < 1e-12, "{c:?}");
        let noisy = transform_convergence(&ModelParams::default(), &g, &InitialCondition::BumpPlusEigen { c: 0.01 }, 1).unwrap();
        assert!(noisy.coarse > 0.0 && noisy.fine > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stats_ignore_row_order(taus in proptest::collection::vec(proptest::option::of(0.0f64..1.0), 1..40), rot in 0usize..40) {
            let rows: Vec<_> = taus.iter().enumerate().map(|(i, t)| row(i as u64, *t)).collect();
            let mut shuffled = rows.clone();
            let k = rot % rows.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = EnsembleStats::from_rows(&rows, 1).unwrap();
            let b = EnsembleStats::from_rows(&shuffled, 1).unwrap();
            prop_assert_eq!(a.clone(), b);
            prop_assert!((0.0..=1.0).contains(&a.p_hat));
        }
    }
}
