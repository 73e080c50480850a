//! Named experiment configurations and the sweep axes of the reference tables.

use crate::config::{Profile, RunConfig, SweepConfig};
use crate::model::{GridSpec, ModelParams};
use crate::montecarlo::SweepAxis;
use crate::simulator::InitialCondition;

/// Exponent sweep, with `p = 2` and the default coefficients.
pub const Q_VALUES: [f64; 9] = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 10.0];
/// Reference blow-up probabilities for [`Q_VALUES`].
pub const Q_P_HAT: [f64; 9] = [0.0, 0.4857, 0.5169, 0.5332, 0.5347, 0.5375, 0.5439, 0.5451, 0.5542];

pub const HURST_VALUES: [f64; 9] = [0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const HURST_P_HAT: [f64; 9] = [0.4646, 0.4956, 0.5059, 0.5287, 0.5270, 0.5481, 0.5534, 0.5592, 0.5557];

/// Noise-intensity sweep, run with `δ = 7`.
pub const SIGMA_VALUES: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 1.5, 2.0];

pub const C_VALUES: [f64; 6] = [0.01, 0.05, 0.1, 1.0, 2.0, 2.5];
pub const C_P_HAT: [f64; 6] = [0.5797, 0.6115, 0.6255, 0.8828, 0.9976, 1.0];

/// Values of `α/2`; the sweep axis itself is `α`.
pub const HALF_ALPHA_VALUES: [f64; 6] = [0.95, 0.9, 0.8, 0.7, 0.6, 0.5];

/// Blow-up time of the noiseless `δ = 7` run.
pub const DETERMINISTIC_TAU: f64 = 0.78;

/// Reference principal eigenvalue at `α = 1.2`.
pub const REFERENCE_LAMBDA1: f64 = 1.3037;

/// Indicative coefficients at the desk scale.
pub fn baseline(profile: Profile) -> RunConfig {
    RunConfig::with_profile(profile)
}

/// `δ = 7` with the noise switched off.
pub fn deterministic_blowup(profile: Profile) -> RunConfig {
    let mut cfg = baseline(profile);
    cfg.model.delta = 7.0;
    cfg.model.sigma = 0.0;
    cfg
}

/// Damped regime with `p = 4`, run on `[0, 10]`. The nonlocal exponent is
/// `q = 2`: `q = 1` would make the nonlocal term linear.
pub fn decay() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelParams {
        delta: 1.0,
        sigma: 0.01,
        gamma: 0.01,
        beta: 2.0,
        hurst: 0.6,
        alpha: 1.2,
        p: 4.0,
        q: 2.0,
        ..ModelParams::default()
    };
    cfg.grid = GridSpec::new(101, 10_000, 10.0);
    cfg.ensemble.n_realizations = 50;
    cfg
}

/// Regime `q > p` used to test the two-sided blow-up-time bracket, with
/// `f = b φ₁`.
pub fn bracketing() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelParams { p: 2.0, q: 3.0, delta: 10.0, beta: 1.0, gamma: 0.1, sigma: 0.1, ..ModelParams::default() };
    cfg.grid = GridSpec::new(101, 2000, 1.0);
    cfg.ic = InitialCondition::ScaledEigen { b: 1.2 };
    cfg.bounds.b = 1.2;
    cfg.ensemble.n_realizations = 200;
    cfg
}

/// Attach one of the reference sweeps to `cfg`.
pub fn with_sweep(mut cfg: RunConfig, axis: SweepAxis) -> RunConfig {
    let values: Vec<f64> = match axis {
        SweepAxis::Q => Q_VALUES.to_vec(),
        SweepAxis::Hurst => HURST_VALUES.to_vec(),
        SweepAxis::Sigma => {
            cfg.model.delta = 7.0;
            SIGMA_VALUES.to_vec()
        }
        SweepAxis::C => C_VALUES.to_vec(),
        SweepAxis::Alpha => HALF_ALPHA_VALUES.iter().map(|s| 2.0 * s).collect(),
    };
    cfg.sweep = Some(SweepConfig { axis, values });
    cfg
}
