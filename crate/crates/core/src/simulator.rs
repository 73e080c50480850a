//! Semi-implicit Euler stepping of the SPDE and of its pathwise transformed
//! random PDE, with blow-up detection.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::linalg::ImplicitStep;
use crate::model::{GridSpec, ModelParams, NoiseScaling, NoiseShape};
use crate::operator::{EigenPair, FracOperator};
use crate::quadrature;

/// Relative tolerance for the approximate positivity check.
pub const POS_TOL: f64 = 1e-8;

/// `sign(v)|v|^e`, with cheap paths for small integer exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
enum OddPower {
    One,
    Two,
    Three,
    Four,
    General(f64),
}

impl OddPower {
    fn new(e: f64) -> Self {
        match e {
            e if e == 1.0 => OddPower::One,
            e if e == 2.0 => OddPower::Two,
            e if e == 3.0 => OddPower::Three,
            e if e == 4.0 => OddPower::Four,
            e => OddPower::General(e),
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            OddPower::One => v,
            OddPower::Two => v * v.abs(),
            OddPower::Three => v * v * v,
            OddPower::Four => {
                let s = v * v;
                s * v * v.abs()
            }
            OddPower::General(e) => v.signum() * v.abs().powf(e),
        }
    }
}

/// `(I − Δt A)^{-1}` for a fixed grid, shared read-only across realizations.
#[derive(Debug, Clone)]
pub struct SemiImplicitSolver {
    step: ImplicitStep,
    dt: f64,
    dx: f64,
}

impl SemiImplicitSolver {
    pub fn new(op: &FracOperator, grid: &GridSpec) -> Result<Self> {
        if op.intervals() != grid.m {
            return Err(Error::param("m", format!("operator has {} intervals, grid {}", op.intervals(), grid.m)));
        }
        Self::from_matrix(op.matrix(), grid.dt(), grid.dx())
    }

    /// Solver for an arbitrary interior matrix `A`.
    pub fn from_matrix(a: &DMatrix<f64>, dt: f64, dx: f64) -> Result<Self> {
        Ok(Self {
            step: ImplicitStep::new(a, dt, 0.0)?,
            dt,
            dx,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dim(&self) -> usize {
        self.step.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    /// `c(1 − x²) + φ₁(x)`
    BumpPlusEigen { c: f64 },
    /// `φ₁(x)`
    PureEigen,
    /// `b φ₁(x)`
    ScaledEigen { b: f64 },
    /// Interior nodal values.
    Custom { values: Vec<f64> },
}

/// Initial field on the interior nodes.
pub fn make_initial_condition(ic: &InitialCondition, eig: &EigenPair, grid: &GridSpec) -> Result<Vec<f64>> {
    let n = grid.m - 1;
    if eig.phi1.len() != n || eig.dx != grid.dx() {
        return Err(Error::param("ic", "eigenpair does not match the grid"));
    }
    let dx = grid.dx();
    let f: Vec<f64> = match ic {
        InitialCondition::BumpPlusEigen { c } => {
            if !(*c >= 0.0) {
                return Err(Error::param("c", format!("must be >= 0, got {c}")));
            }
            eig.phi1
                .iter()
                .enumerate()
                .map(|(j, phi)| {
                    let x = -1.0 + (j + 1) as f64 * dx;
                    c * (1.0 - x * x) + phi
                })
                .collect()
        }
        InitialCondition::PureEigen => eig.phi1.clone(),
        InitialCondition::ScaledEigen { b } => {
            if !(*b >= 0.0) {
                return Err(Error::param("b", format!("must be >= 0, got {b}")));
            }
            eig.phi1.iter().map(|v| b * v).collect()
        }
        InitialCondition::Custom { values } => {
            if values.len() != n {
                return Err(Error::param("ic", format!("expected {n} interior values, got {}", values.len())));
            }
            if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::param("ic", format!("initial data must be nonnegative, found {v}")));
            }
            values.clone()
        }
    };
    Ok(f)
}

/// `F(u)_j = δ ∫u^q + γ u_j − β u_j^p`, with Simpson for the integral.
///
/// Returns the drift and whether Simpson fell back to a trapezoid panel.
pub fn nonlocal_drift(u: &[f64], params: &ModelParams, dx: f64) -> Result<(Vec<f64>, bool)> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { time: f64::NAN });
    }
    let qp = OddPower::new(params.q);
    let pp = OddPower::new(params.p);
    let (integral, fallback) = quadrature::simpson_interior(u, dx, |v| qp.apply(v));
    let f = u
        .iter()
        .map(|&v| params.delta * integral + params.gamma * v - params.beta * pp.apply(v))
        .collect();
    Ok((f, fallback))
}

/// Scratch buffers for one realization.
struct Workspace {
    rhs: DVector<f64>,
    next: DVector<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            rhs: DVector::zeros(n),
            next: DVector::zeros(n),
        }
    }
}

/// Coefficients of one explicit stage: `rhs = u + Δt[c_q I_q + γ u − c_p u^p] + noise`.
#[derive(Debug, Clone, Copy)]
struct Stage {
    c_q: f64,
    gamma: f64,
    c_p: f64,
}

#[inline]
fn explicit_stage(
    u: &DVector<f64>,
    stage: Stage,
    qp: OddPower,
    pp: OddPower,
    dt: f64,
    dx: f64,
    noise: impl Fn(f64) -> f64,
    rhs: &mut DVector<f64>,
) {
    let integral = quadrature::simpson_interior(u.as_slice(), dx, |v| qp.apply(v)).0;
    let nonlocal = stage.c_q * integral;
    for (r, &v) in rhs.iter_mut().zip(u.iter()) {
        let f = nonlocal + stage.gamma * v - stage.c_p * pp.apply(v);
        *r = v + dt * f + noise(v);
    }
}

/// `Δt·B_h` for one node given the sampled increment.
#[inline]
fn noise_term(params: &ModelParams, u: f64, increment: f64) -> f64 {
    params.noise(u) * increment
}

fn effective_increment(params: &ModelParams, increment: f64, dt: f64) -> f64 {
    match params.noise_scaling {
        NoiseScaling::Increment => increment,
        NoiseScaling::UnitFgn => increment / dt.powf(params.hurst),
    }
}

/// One step `(I − ΔtA)u^{n+1} = u^n + ΔtF(u^n) + σ(u^n)ΔB_n`.
pub fn step_semi_implicit(
    u: &[f64],
    noise_increment: f64,
    solver: &SemiImplicitSolver,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if u.len() != solver.dim() {
        return Err(Error::param("u", "length does not match the solver"));
    }
    let u = DVector::from_column_slice(u);
    let mut ws = Workspace::new(u.len());
    let inc = effective_increment(params, noise_increment, solver.dt);
    let stage = Stage { c_q: params.delta, gamma: params.gamma, c_p: params.beta };
    explicit_stage(
        &u,
        stage,
        OddPower::new(params.q),
        OddPower::new(params.p),
        solver.dt,
        solver.dx,
        |v| noise_term(params, v, inc),
        &mut ws.rhs,
    );
    solver.step.apply(&ws.rhs, &mut ws.next);
    if ws.next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { time: f64::NAN });
    }
    Ok(ws.next.as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Threshold,
    Overflow,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Threshold => "threshold",
            Termination::Overflow => "overflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupRecord {
    pub blew_up: bool,
    /// Time of the step at which the threshold was crossed or overflow hit.
    pub tau_b: Option<f64>,
    /// `‖u(t_n)‖_∞` for `n = 0..=last step taken`.
    pub sup_history: Vec<f64>,
    pub termination: Termination,
    /// Steps with `min u < −POS_TOL·‖u‖_∞`.
    pub positivity_violations: usize,
    pub simpson_fallback: bool,
}

impl BlowupRecord {
    pub fn sup_final(&self) -> f64 {
        *self.sup_history.last().unwrap_or(&0.0)
    }

    pub fn steps_taken(&self) -> usize {
        self.sup_history.len().saturating_sub(1)
    }
}

/// One CSV row of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    pub realization_id: u64,
    pub seed: u64,
    pub blew_up: bool,
    pub tau_b: Option<f64>,
    pub termination: Termination,
    pub sup_final: f64,
}

impl RealizationRow {
    pub fn new(realization_id: u64, seed: u64, rec: &BlowupRecord) -> Self {
        Self {
            realization_id,
            seed,
            blew_up: rec.blew_up,
            tau_b: rec.tau_b,
            termination: rec.termination,
            sup_final: rec.sup_final(),
        }
    }
}

/// Field snapshots at a fixed stride (always including the last step taken).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stride: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Interior node coordinates.
    pub nodes: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl Trajectory {
    fn new(stride: usize, nodes: Vec<f64>) -> Self {
        Self {
            stride,
            steps: Vec::new(),
            times: Vec::new(),
            nodes,
            fields: Vec::new(),
        }
    }

    fn push(&mut self, n: usize, t: f64, u: &[f64]) {
        if self.steps.last() != Some(&n) {
            self.steps.push(n);
            self.times.push(t);
            self.fields.push(u.to_vec());
        }
    }

    /// CSV `n,t,x_1..x_K` header row of coordinates, then one row per snapshot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let xs: Vec<String> = self.nodes.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "n,t,{}", xs.join(","))?;
        for ((n, t), u) in self.steps.iter().zip(&self.times).zip(&self.fields) {
            let us: Vec<String> = u.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{n},{t:?},{}", us.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub record: BlowupRecord,
    pub trajectory: Option<Trajectory>,
}

fn sup_abs(u: &DVector<f64>) -> f64 {
    u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn nodes(grid: &GridSpec) -> Vec<f64> {
    let dx = grid.dx();
    (1..grid.m).map(|j| -1.0 + j as f64 * dx).collect()
}

fn check_inputs(grid: &GridSpec, solver: &SemiImplicitSolver, path: &FbmPath, f: &[f64]) -> Result<()> {
    if path.n_steps() != grid.n {
        return Err(Error::param("path", format!("has {} steps, grid expects {}", path.n_steps(), grid.n)));
    }
    if f.len() != grid.m - 1 || solver.dim() != grid.m - 1 {
        return Err(Error::param("f", "length does not match the grid"));
    }
    if (solver.dt - grid.dt()).abs() > 1e-15 * grid.dt() {
        return Err(Error::param("dt", "solver was built for a different time step"));
    }
    Ok(())
}

/// Shared stepping loop. `stage_at(n)` gives the drift coefficients for step
/// `n`, `noise(n, v)` the noise contribution, `observe(n, v)` maps the state
/// to the physical field (identity for the direct scheme).
#[allow(clippy::too_many_arguments)]
fn run_loop(
    params: &ModelParams,
    grid: &GridSpec,
    solver: &SemiImplicitSolver,
    f: &[f64],
    stride: Option<usize>,
    stage_at: impl Fn(usize) -> Stage,
    noise: impl Fn(usize, f64) -> f64,
    observe_scale: impl Fn(usize) -> f64,
) -> Result<Realization> {
    if stride == Some(0) {
        return Err(Error::param("trajectory_stride", "must be positive"));
    }
    let n_int = grid.m - 1;
    let dt = grid.dt();
    let qp = OddPower::new(params.q);
    let pp = OddPower::new(params.p);
    let simpson_fallback = n_int % 2 == 0;
    let mut ws = Workspace::new(n_int);
    let mut v = DVector::from_column_slice(f);
    let mut traj = stride.map(|s| Trajectory::new(s, nodes(grid)));
    let mut observed = v.clone();

    let mut sup_history = Vec::with_capacity(grid.n + 1);
    sup_history.push(sup_abs(&v) * observe_scale(0));
    if let Some(t) = traj.as_mut() {
        t.push(0, 0.0, v.as_slice());
    }
    let mut termination = Termination::Completed;
    let mut tau_b = None;
    let mut positivity_violations = 0;

    for n in 0..grid.n {
        explicit_stage(&v, stage_at(n), qp, pp, dt, solver.dx, |x| noise(n, x), &mut ws.rhs);
        solver.step.apply(&ws.rhs, &mut ws.next);
        std::mem::swap(&mut v, &mut ws.next);

        let t = (n + 1) as f64 * dt;
        let scale = observe_scale(n + 1);
        let finite = v.iter().all(|x| x.is_finite()) && scale.is_finite();
        let sup = if finite { sup_abs(&v) * scale } else { f64::INFINITY };
        sup_history.push(sup);
        if !finite || !sup.is_finite() {
            termination = Termination::Overflow;
            tau_b = Some(t);
        } else {
            let min = v.iter().fold(f64::INFINITY, |m, x| m.min(*x)) * scale;
            if min < -POS_TOL * sup {
                positivity_violations += 1;
            }
            if sup >= grid.blowup_threshold {
                termination = Termination::Threshold;
                tau_b = Some(t);
            }
        }
        if let Some(tr) = traj.as_mut() {
            let s = tr.stride;
            if (n + 1) % s == 0 || tau_b.is_some() || n + 1 == grid.n {
                observed.copy_from(&v);
                observed *= scale;
                tr.push(n + 1, t, observed.as_slice());
            }
        }
        if tau_b.is_some() {
            break;
        }
    }

    Ok(Realization {
        record: BlowupRecord {
            blew_up: tau_b.is_some(),
            tau_b,
            sup_history,
            termination,
            positivity_violations,
            simpson_fallback,
        },
        trajectory: traj,
    })
}

/// Run the direct scheme on one path. `stride` requests field snapshots.
pub fn simulate_realization(
    params: &ModelParams,
    grid: &GridSpec,
    solver: &SemiImplicitSolver,
    path: &FbmPath,
    f: &[f64],
    stride: Option<usize>,
) -> Result<Realization> {
    check_inputs(grid, solver, path, f)?;
    let dt = grid.dt();
    let incs: Vec<f64> = path
        .increments
        .iter()
        .map(|d| effective_increment(params, *d, dt))
        .collect();
    let stage = Stage { c_q: params.delta, gamma: params.gamma, c_p: params.beta };
    run_loop(
        params,
        grid,
        solver,
        f,
        stride,
        |_| stage,
        |n, v| noise_term(params, v, incs[n]),
        |_| 1.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformVariant {
    /// Pathwise (Young) transform for fBm noise.
    FbmS1,
    /// Itô transform for Brownian noise; linear rate becomes `γ − σ²/2`.
    BrownianSs1,
}

/// Step `v` with coefficients frozen at the left endpoint and report the
/// reconstructed `u = e^{σB(t)} v`.
pub fn simulate_transformed(
    params: &ModelParams,
    grid: &GridSpec,
    solver: &SemiImplicitSolver,
    path: &FbmPath,
    f: &[f64],
    variant: TransformVariant,
    stride: Option<usize>,
) -> Result<Realization> {
    check_inputs(grid, solver, path, f)?;
    if params.noise_shape != NoiseShape::Linear {
        return Err(Error::param("noise_shape", "the transform needs linear noise"));
    }
    if params.noise_scaling != NoiseScaling::Increment {
        return Err(Error::param("noise_scaling", "the transform is defined for the increment convention"));
    }
    let gamma_eff = match variant {
        TransformVariant::FbmS1 => params.gamma,
        TransformVariant::BrownianSs1 => {
            if path.hurst != 0.5 {
                return Err(Error::param("hurst", "the Brownian transform needs an H = 1/2 path"));
            }
            params.gamma - 0.5 * params.sigma * params.sigma
        }
    };
    let sigma = params.sigma;
    let b = &path.values;
    run_loop(
        params,
        grid,
        solver,
        f,
        stride,
        |n| Stage {
            c_q: params.delta * ((params.q - 1.0) * sigma * b[n]).exp(),
            gamma: gamma_eff,
            c_p: params.beta * ((params.p - 1.0) * sigma * b[n]).exp(),
        },
        |_, _| 0.0,
        |n| (sigma * b[n]).exp(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm_path, SamplingMethod};
    use crate::operator::{build_fd_matrix, default_rho, principal_eigenpair, DEFAULT_EIGEN_TOL};
    use proptest::prelude::*;

    fn setup(m: usize, n: usize, t: f64) -> (ModelParams, GridSpec, FracOperator, EigenPair, SemiImplicitSolver) {
        let params = ModelParams::default();
        let grid = GridSpec::new(m, n, t);
        let op = build_fd_matrix(params.alpha, m, default_rho(params.alpha)).unwrap();
        let eig = principal_eigenpair(&op, DEFAULT_EIGEN_TOL).unwrap();
        let solver = SemiImplicitSolver::new(&op, &grid).unwrap();
        (params, grid, op, eig, solver)
    }

    #[test]
    fn initial_condition_kinds() {
        let (_, grid, _, eig, _) = setup(40, 10, 1.0);
        let f = make_initial_condition(&InitialCondition::BumpPlusEigen { c: 0.0 }, &eig, &grid).unwrap();
        assert_eq!(f, eig.phi1);
        let g = make_initial_condition(&InitialCondition::PureEigen, &eig, &grid).unwrap();
        assert_eq!(g, eig.phi1);
        for c in [0.01, 0.1, 2.5] {
            let f = make_initial_condition(&InitialCondition::BumpPlusEigen { c }, &eig, &grid).unwrap();
            assert!(f.iter().all(|v| *v >= 0.0));
            assert!(f.iter().cloned().fold(0.0, f64::max) >= eig.max());
        }
        let bad = InitialCondition::Custom { values: vec![-1.0; 39] };
        assert!(make_initial_condition(&bad, &eig, &grid).is_err());
        assert!(make_initial_condition(&InitialCondition::BumpPlusEigen { c: -1.0 }, &eig, &grid).is_err());
    }

    #[test]
    fn drift_examples() {
        let mut p = ModelParams::default();
        let dx = 2.0 / 40.0;
        let (f, _) = nonlocal_drift(&[0.0; 39], &p, dx).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));

        // u = 1 - x² vanishes at ±1, so the zero-boundary Simpson rule is exact
        let xs: Vec<f64> = (1..40).map(|j| -1.0 + j as f64 * dx).collect();
        let u: Vec<f64> = xs.iter().map(|x| 1.0 - x * x).collect();
        p.q = 1.0;
        let (f, fallback) = nonlocal_drift(&u, &p, dx).unwrap();
        assert!(!fallback);
        for (j, x) in xs.iter().enumerate() {
            let w = 1.0 - x * x;
            let expect = 4.0 / 3.0 * p.delta + p.gamma * w - p.beta * w.powf(p.p);
            assert!((f[j] - expect).abs() < 1e-13);
        }
        assert!(nonlocal_drift(&[f64::NAN; 39], &p, dx).is_err());
    }

    #[test]
    fn drift_constant_field_with_full_grid() {
        // constant u on the closed grid: check F = 2δ + γ − β via the
        // node-inclusive Simpson rule
        let p = ModelParams { delta: 1.5, ..ModelParams::default() };
        let vals = vec![1.0; 41];
        let (integral, _) = quadrature::simpson(&vals, 2.0 / 40.0);
        assert!((integral - 2.0).abs() < 1e-14);
        assert!((p.delta * integral + p.gamma - p.beta - (2.0 * p.delta + p.gamma - p.beta)).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_gives_forward_euler() {
        let p = ModelParams { sigma: 0.0, ..ModelParams::default() };
        let n = 15;
        let dx = 2.0 / 16.0;
        let dt = 0.01;
        let solver = SemiImplicitSolver::from_matrix(&DMatrix::zeros(n, n), dt, dx).unwrap();
        let u: Vec<f64> = (0..n).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let next = step_semi_implicit(&u, 0.3, &solver, &p).unwrap();
        let (f, _) = nonlocal_drift(&u, &p, dx).unwrap();
        for j in 0..n {
            assert!((next[j] - (u[j] + dt * f[j])).abs() < 1e-14);
        }
    }

    #[test]
    fn pure_diffusion_step_obeys_maximum_principle() {
        let p = ModelParams { delta: 0.0, gamma: 0.0, beta: 0.0, sigma: 0.0, ..ModelParams::default() };
        let (_, grid, _, _, solver) = setup(16, 20, 0.2);
        let mut rng = crate::seeding::rng_from_seed(3);
        use rand::Rng;
        for _ in 0..20 {
            let u: Vec<f64> = (0..grid.m - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
            let next = step_semi_implicit(&u, 0.0, &solver, &p).unwrap();
            let max0 = u.iter().cloned().fold(0.0, f64::max);
            assert!(next.iter().all(|v| *v <= max0 + 1e-15 && *v >= 0.0));
        }
    }

    #[test]
    fn brownian_noise_wiring() {
        let p = ModelParams { delta: 0.0, gamma: 0.0, beta: 0.0, sigma: 0.2, hurst: 0.5, ..ModelParams::default() };
        let n = 9;
        let dt = 0.01;
        let solver = SemiImplicitSolver::from_matrix(&DMatrix::zeros(n, n), dt, 0.2).unwrap();
        let xi = 1.7;
        let u = vec![2.0; n];
        let next = step_semi_implicit(&u, dt.sqrt() * xi, &solver, &p).unwrap();
        assert!((next[0] - (2.0 + 0.2 * 2.0 * dt.sqrt() * xi)).abs() < 1e-14);

        let unit = ModelParams { noise_scaling: NoiseScaling::UnitFgn, ..p };
        let next = step_semi_implicit(&u, dt.sqrt() * xi, &solver, &unit).unwrap();
        assert!((next[0] - (2.0 + 0.2 * 2.0 * xi)).abs() < 1e-13);
    }

    #[test]
    fn zero_data_is_an_equilibrium() {
        let (mut p, grid, _, _, solver) = setup(30, 200, 1.0);
        for shape in [NoiseShape::Linear, NoiseShape::Saturating] {
            p.noise_shape = shape;
            let path = sample_fbm_path(p.hurst, 1.0, 200, 7).unwrap();
            let r = simulate_realization(&p, &grid, &solver, &path, &vec![0.0; 29], Some(50)).unwrap();
            assert!(!r.record.blew_up);
            assert!(r.record.sup_history.iter().all(|v| *v == 0.0));
            assert_eq!(r.record.termination, Termination::Completed);
            assert_eq!(r.trajectory.unwrap().steps, vec![0, 50, 100, 150, 200]);
        }
    }

    #[test]
    fn blowup_is_detected_and_recorded() {
        let (mut p, mut grid, _, eig, solver) = setup(30, 400, 1.0);
        p.delta = 50.0;
        p.sigma = 0.0;
        grid.blowup_threshold = 1e6;
        let f = make_initial_condition(&InitialCondition::ScaledEigen { b: 3.0 }, &eig, &grid).unwrap();
        let path = FbmPath::zero(0.6, grid.dt(), grid.n);
        let r = simulate_realization(&p, &grid, &solver, &path, &f, Some(1)).unwrap();
        assert!(r.record.blew_up);
        let tau = r.record.tau_b.unwrap();
        assert!(tau > 0.0 && tau <= 1.0);
        assert_eq!(tau, r.record.steps_taken() as f64 * grid.dt());
        assert!(r.record.sup_final() >= grid.blowup_threshold || r.record.termination == Termination::Overflow);
        let traj = r.trajectory.unwrap();
        assert_eq!(*traj.steps.last().unwrap(), r.record.steps_taken());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (p, grid, _, eig, solver) = setup(30, 100, 1.0);
        let path = sample_fbm_path(0.6, 1.0, 50, 1).unwrap();
        assert!(simulate_realization(&p, &grid, &solver, &path, &eig.phi1, None).is_err());
        let path = sample_fbm_path(0.6, 1.0, 100, 1).unwrap();
        assert!(simulate_realization(&p, &grid, &solver, &path, &eig.phi1, Some(0)).is_err());
        let sat = ModelParams { noise_shape: NoiseShape::Saturating, ..p.clone() };
        assert!(simulate_transformed(&sat, &grid, &solver, &path, &eig.phi1, TransformVariant::FbmS1, None).is_err());
        assert!(simulate_transformed(&p, &grid, &solver, &path, &eig.phi1, TransformVariant::BrownianSs1, None).is_err());
    }

    #[test]
    fn transform_is_identity_without_noise() {
        let (mut p, grid, _, eig, solver) = setup(40, 300, 1.0);
        p.sigma = 0.0;
        p.delta = 3.0;
        let f = make_initial_condition(&InitialCondition::BumpPlusEigen { c: 0.5 }, &eig, &grid).unwrap();
        let path = sample_fbm_path(0.6, 1.0, 300, 9).unwrap();
        let d = simulate_realization(&p, &grid, &solver, &path, &f, Some(1)).unwrap();
        let t = simulate_transformed(&p, &grid, &solver, &path, &f, TransformVariant::FbmS1, Some(1)).unwrap();
        assert_eq!(d.record, t.record);
        assert_eq!(d.trajectory, t.trajectory);
    }

    #[test]
    fn brownian_transform_uses_shifted_rate() {
        // with δ = β = 0 and no diffusion the transformed state obeys
        // v' = (γ − σ²/2) v exactly per step
        let p = ModelParams { delta: 0.0, beta: 0.0, gamma: 0.3, sigma: 1.0, hurst: 0.5, ..ModelParams::default() };
        let grid = GridSpec::new(10, 50, 0.5);
        let solver = SemiImplicitSolver::from_matrix(&DMatrix::zeros(9, 9), grid.dt(), grid.dx()).unwrap();
        let path = sample_fbm_path(0.5, 0.5, 50, 2).unwrap();
        let f = vec![1.0; 9];
        let r = simulate_transformed(&p, &grid, &solver, &path, &f, TransformVariant::BrownianSs1, Some(50)).unwrap();
        let traj = r.trajectory.unwrap();
        let v_end = traj.fields[1][0] / (p.sigma * path.values[50]).exp();
        let expect = (1.0 + grid.dt() * (0.3 - 0.5)).powi(50);
        assert!((v_end - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn realization_row_and_trajectory_csv() {
        let rec = BlowupRecord {
            blew_up: true,
            tau_b: Some(0.5),
            sup_history: vec![1.0, 2.0, 5e15],
            termination: Termination::Threshold,
            positivity_violations: 0,
            simpson_fallback: true,
        };
        let row = RealizationRow::new(3, 99, &rec);
        assert_eq!(row.sup_final, 5e15);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, "realization_id,seed,blew_up,tau_b,termination,sup_final\n3,99,true,0.5,threshold,5000000000000000.0\n");

        let traj = Trajectory {
            stride: 1,
            steps: vec![0],
            times: vec![0.0],
            nodes: vec![-0.5, 0.5],
            fields: vec![vec![1.0, 2.0]],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,t,-0.5,0.5\n0,0.0,1.0,2.0\n");
    }

    #[test]
    fn deterministic_given_inputs() {
        let (p, grid, _, eig, solver) = setup(30, 200, 1.0);
        let path = sample_fbm_path(0.6, 1.0, 200, 17).unwrap();
        let a = simulate_realization(&p, &grid, &solver, &path, &eig.phi1, None).unwrap();
        let b = simulate_realization(&p, &grid, &solver, &path, &eig.phi1, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(path.method, SamplingMethod::CirculantEmbedding);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn odd_power_matches_definition(v in -50.0f64..50.0, e in prop::sample::select(vec![1.0, 2.0, 3.0, 4.0, 1.5, 2.7])) {
            let got = OddPower::new(e).apply(v);
            let want = v.signum() * v.abs().powf(e);
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn ordered_data_stay_ordered(seed in 0u64..1000, scale in 0.1f64..0.9) {
            let (p, grid, _, eig, solver) = setup(20, 100, 0.5);
            let path = sample_fbm_path(p.hurst, 0.5, 100, seed).unwrap();
            let hi = make_initial_condition(&InitialCondition::BumpPlusEigen { c: 0.2 }, &eig, &grid).unwrap();
            let lo: Vec<f64> = hi.iter().map(|v| scale * v).collect();
            let a = simulate_realization(&p, &grid, &solver, &path, &lo, Some(1)).unwrap().trajectory.unwrap();
            let b = simulate_realization(&p, &grid, &solver, &path, &hi, Some(1)).unwrap().trajectory.unwrap();
            for (ul, uh) in a.fields.iter().zip(&b.fields) {
                for (x, y) in ul.iter().zip(uh) {
                    prop_assert!(x <= &(y + 1e-12));
                }
            }
        }
    }
}
