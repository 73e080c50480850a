//! Closed-form blow-up-time brackets, growth envelopes, admissibility
//! conditions and blow-up probability bounds, evaluated on sampled paths.
//!
//! Conventions shared by every function here:
//! * `profile[n]` is `‖e^{γ t_n} S_α(t_n)‖_∞` on the path grid;
//! * `|D| = 2`;
//! * `φ₁` has unit mass, so `∫ v φ₁ ≤ ‖v‖_∞`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fbm::{exp_functional_infinite, running_sup_abs, ExpWeights, FbmPath, FbmSampler};
use crate::gamma::{regularized_gamma_p, regularized_gamma_q};
use crate::model::{GridSpec, ModelParams};
use crate::operator::EigenPair;
use crate::seeding::{derive_seed, rng_from_seed};

pub const DOMAIN_MEASURE: f64 = 2.0;
const TAIL_RATIO: f64 = 1e-12;

/// First grid time at which a nondecreasing integral reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingTime {
    /// `None` means "not hit within the horizon".
    pub time: Option<f64>,
    pub threshold: f64,
    /// Integral value at the hit, or at the horizon.
    pub accumulated: f64,
}

impl HittingTime {
    pub fn hit(&self) -> bool {
        self.time.is_some()
    }
}

fn steps_to(path: &FbmPath, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::param("t", "horizon must be nonnegative"));
    }
    let n = (t / path.dt * (1.0 + 1e-12)).floor() as usize;
    if n > path.n_steps() {
        return Err(Error::param("t", format!("horizon {t} exceeds the path horizon {}", path.horizon())));
    }
    Ok(n)
}

/// Cumulative trapezoid of `integrand(n)` over `0..=n_max`, stopping at the
/// first node whose running integral reaches `threshold`.
fn first_crossing(dt: f64, n_max: usize, threshold: f64, integrand: impl Fn(usize) -> f64) -> HittingTime {
    let mut acc = 0.0;
    let mut prev = integrand(0);
    if threshold <= 0.0 {
        return HittingTime { time: Some(0.0), threshold, accumulated: 0.0 };
    }
    for n in 1..=n_max {
        let cur = integrand(n);
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
        if acc >= threshold {
            return HittingTime { time: Some(n as f64 * dt), threshold, accumulated: acc };
        }
    }
    HittingTime { time: None, threshold, accumulated: acc }
}

fn cumulative(dt: f64, n_max: usize, integrand: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(0.0);
    let mut prev = integrand(0);
    let mut acc = 0.0;
    for n in 1..=n_max {
        let cur = integrand(n);
        acc += 0.5 * dt * (prev + cur);
        out.push(acc);
        prev = cur;
    }
    out
}

fn check_lower_inputs(params: &ModelParams, f_sup: f64) -> Result<()> {
    if !(params.q > 1.0) {
        return Err(Error::param("q", "the lower bound needs q > 1"));
    }
    if !(params.delta > 0.0) {
        return Err(Error::param("delta", "the lower bound needs delta > 0"));
    }
    if !(f_sup > 0.0) {
        return Err(Error::param("f_sup", "must be positive"));
    }
    Ok(())
}

/// Integrand `e^{(q−1)σB(r)} profile(r)^{q−1}` of the lower bound.
fn lower_integrand<'a>(path: &'a FbmPath, profile: &'a [f64], params: &'a ModelParams) -> impl Fn(usize) -> f64 + 'a {
    let k = params.q - 1.0;
    move |n| (k * params.sigma * path.values[n]).exp() * profile[n].powf(k)
}

fn lower_threshold(params: &ModelParams, f_sup: f64) -> f64 {
    1.0 / (params.delta * DOMAIN_MEASURE * (params.q - 1.0) * f_sup.powf(params.q - 1.0))
}

/// Lower blow-up time `τ_*`.
pub fn tau_lower_bound(path: &FbmPath, profile: &[f64], params: &ModelParams, f_sup: f64, t: f64) -> Result<HittingTime> {
    check_lower_inputs(params, f_sup)?;
    let n = steps_to(path, t)?;
    if profile.len() <= n {
        return Err(Error::param("profile", format!("has {} samples, horizon needs {}", profile.len(), n + 1)));
    }
    Ok(first_crossing(
        path.dt,
        n,
        lower_threshold(params, f_sup),
        lower_integrand(path, profile, params),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub g: Vec<f64>,
    /// `profile · f_sup · G`, an upper envelope for `‖v(t)‖_∞`.
    pub upper: Vec<f64>,
}

/// `G(t) = [1 − (q−1)δ|D| f_sup^{q−1} ∫₀^t …]^{−1/(q−1)}` on `[0, t_end]`.
pub fn growth_envelope(
    path: &FbmPath,
    profile: &[f64],
    params: &ModelParams,
    f_sup: f64,
    t_end: f64,
) -> Result<Envelope> {
    check_lower_inputs(params, f_sup)?;
    let n = steps_to(path, t_end)?;
    if profile.len() <= n {
        return Err(Error::param("profile", "shorter than the requested window"));
    }
    let k = params.q - 1.0;
    let coeff = k * params.delta * DOMAIN_MEASURE * f_sup.powf(k);
    let acc = cumulative(path.dt, n, lower_integrand(path, profile, params));
    let mut env = Envelope { times: Vec::new(), g: Vec::new(), upper: Vec::new() };
    for (i, a) in acc.iter().enumerate() {
        let bracket = 1.0 - coeff * a;
        if !(bracket > 0.0) {
            let hit = tau_lower_bound(path, profile, params, f_sup, path.horizon())?
                .time
                .unwrap_or(f64::INFINITY);
            return Err(Error::BracketNonpositive { t: path.time(i), hit });
        }
        let g = bracket.powf(-1.0 / k);
        env.times.push(path.time(i));
        env.g.push(g);
        env.upper.push(profile[i] * f_sup * g);
    }
    Ok(env)
}

/// Which noise the admissibility condition is stated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Fractional,
    /// Brownian form: `λ₁` is replaced by `λ₁ + ϑ`, `ϑ = σ²/2 − γ`.
    Brownian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct B1Check {
    pub satisfied: bool,
    /// `min(lhs₁/rhs₁, lhs₂/rhs₂)`; `≥ 1` iff satisfied.
    pub margin: f64,
    pub first_ratio: f64,
    pub second_ratio: f64,
    pub b_star: f64,
}

fn check_exponents(params: &ModelParams) -> Result<()> {
    if params.p == params.q {
        return Err(Error::param("q", "exponent q/(q-p) is undefined at p = q"));
    }
    Ok(())
}

/// `∫φ₁^{q/(q−p)}` raised to `(p−q)/p`.
fn phi_holder_factor(eig: &EigenPair, params: &ModelParams) -> Result<f64> {
    check_exponents(params)?;
    let (p, q) = (params.p, params.q);
    let integral = eig.power_integral(q / (q - p));
    if !(integral > 0.0 && integral.is_finite()) {
        return Err(Error::param("phi1", format!("power integral is {integral}")));
    }
    Ok(integral.powf((p - q) / p))
}

/// Both admissibility inequalities at time `t` on the given path.
pub fn check_condition_b1(
    b: f64,
    t: f64,
    path: &FbmPath,
    params: &ModelParams,
    eig: &EigenPair,
    family: NoiseFamily,
) -> Result<B1Check> {
    if !(b > 1.0) {
        return Err(Error::param("b", format!("must exceed 1, got {b}")));
    }
    check_exponents(params)?;
    let (p, q) = (params.p, params.q);
    let n = steps_to(path, t)?;
    let b_star = running_sup_abs(path)[n];
    let m1 = eig.max();
    let lambda = match family {
        NoiseFamily::Fractional => eig.lambda1,
        NoiseFamily::Brownian => eig.lambda1 + 0.5 * params.sigma * params.sigma - params.gamma,
    };
    let base = b.powf(q - p) * params.delta;
    let lhs1 = base * (-params.sigma * (q - p) * b_star).exp();
    let rhs1 = (params.beta * m1.powf(p) + lambda * m1) * DOMAIN_MEASURE.powf(q - 1.0);
    let lhs2 = base * (-params.sigma * (q - 1.0) * b_star).exp();
    let i_holder = eig.power_integral(q / (q - p));
    let i_p1 = eig.power_integral(p + 1.0);
    if !(i_holder > 0.0 && i_p1 > 0.0) {
        return Err(Error::param("phi1", "negative base in a power integral"));
    }
    let e = (q - p) / p;
    let rhs2 = 2.0 * params.beta * i_holder.powf(e) / i_p1.powf(e);
    let ratio = |l: f64, r: f64| if r <= 0.0 { f64::INFINITY } else { l / r };
    let first_ratio = ratio(lhs1, rhs1);
    let second_ratio = ratio(lhs2, rhs2);
    let margin = first_ratio.min(second_ratio);
    Ok(B1Check { satisfied: margin >= 1.0, margin, first_ratio, second_ratio, b_star })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperBound {
    pub hitting: HittingTime,
    pub j0: f64,
    pub c0: f64,
    /// `f ≥ b φ₁` failed somewhere.
    pub precondition_violated: bool,
}

/// `J0 = Σ f φ₁ Δx`.
pub fn j0(f: &[f64], eig: &EigenPair) -> f64 {
    f.iter().zip(&eig.phi1).map(|(a, b)| a * b).sum::<f64>() * eig.dx
}

/// `2 J0^{1−q} / (δ(q−1)(∫φ₁^{q/(q−p)})^{(p−q)/p})`, the level of the upper bound.
pub fn upper_threshold(params: &ModelParams, eig: &EigenPair, j0: f64) -> Result<f64> {
    let factor = phi_holder_factor(eig, params)?;
    Ok(2.0 * j0.powf(1.0 - params.q) / (params.delta * (params.q - 1.0) * factor))
}

/// Upper blow-up time `τ^*`.
pub fn tau_upper_bound(
    path: &FbmPath,
    eig: &EigenPair,
    params: &ModelParams,
    f: &[f64],
    b: f64,
    t: f64,
) -> Result<UpperBound> {
    if !(params.q > 1.0 && params.delta > 0.0) {
        return Err(Error::param("q", "the upper bound needs q > 1 and delta > 0"));
    }
    let n = steps_to(path, t)?;
    let j0 = j0(f, eig);
    let factor = phi_holder_factor(eig, params)?;
    let c0 = 0.5 * params.delta * factor;
    let threshold = upper_threshold(params, eig, j0)?;
    let precondition_violated = f.iter().zip(&eig.phi1).any(|(fv, phi)| *fv < b * phi);
    if precondition_violated {
        log::warn!("initial data do not dominate b*phi1 for b = {b}");
    }
    let k = params.q - 1.0;
    let rate = (params.gamma - eig.lambda1) * k;
    let hitting = first_crossing(path.dt, n, threshold, |i| {
        (params.sigma * k * path.values[i] + rate * path.time(i)).exp()
    });
    Ok(UpperBound { hitting, j0, c0, precondition_violated })
}

/// `e^{(γ−λ₁)t}[J0^{1−q} − (q−1)c0 ∫₀^t …]^{−1/(q−1)}`, a lower profile for
/// `∫ v φ₁` and hence for `‖v(t)‖_∞`.
pub fn bernoulli_lower_profile(
    path: &FbmPath,
    eig: &EigenPair,
    params: &ModelParams,
    j0: f64,
    t_end: f64,
) -> Result<Vec<f64>> {
    let n = steps_to(path, t_end)?;
    let k = params.q - 1.0;
    if !(k > 0.0) {
        return Err(Error::param("q", "must exceed 1"));
    }
    let c0 = 0.5 * params.delta * phi_holder_factor(eig, params)?;
    let rate = (params.gamma - eig.lambda1) * k;
    let acc = cumulative(path.dt, n, |i| (params.sigma * k * path.values[i] + rate * path.time(i)).exp());
    let start = j0.powf(1.0 - params.q);
    let mut out = Vec::with_capacity(n + 1);
    for (i, a) in acc.iter().enumerate() {
        let bracket = start - k * c0 * a;
        if !(bracket > 0.0) {
            let hit = first_crossing(path.dt, path.n_steps(), start / (k * c0), |m| {
                (params.sigma * k * path.values[m] + rate * path.time(m)).exp()
            })
            .time
            .unwrap_or(f64::INFINITY);
            return Err(Error::BracketNonpositive { t: path.time(i), hit });
        }
        out.push(((params.gamma - eig.lambda1) * path.time(i)).exp() * bracket.powf(-1.0 / k));
    }
    Ok(out)
}

/// Global existence test on `[0, T_cut]`: `Some(true)` when the threshold is
/// provably out of reach, `Some(false)` when it is reached, `None` when the
/// tail has not decayed enough to decide.
pub fn global_existence_criterion(
    path: &FbmPath,
    profile: &[f64],
    params: &ModelParams,
    f_sup: f64,
    t_cut: f64,
) -> Result<Option<bool>> {
    if params.delta == 0.0 || f_sup == 0.0 {
        return Ok(Some(true));
    }
    if !(params.q > 1.0) {
        return Err(Error::param("q", "must exceed 1"));
    }
    let n = steps_to(path, t_cut)?;
    if profile.len() <= n {
        return Err(Error::param("profile", "shorter than the truncation horizon"));
    }
    let integrand = lower_integrand(path, profile, params);
    let acc = *cumulative(path.dt, n, &integrand).last().unwrap();
    let lhs = params.delta * DOMAIN_MEASURE * (params.q - 1.0) * acc * f_sup.powf(params.q - 1.0);
    if lhs >= 1.0 {
        return Ok(Some(false));
    }
    if integrand(n) < TAIL_RATIO * acc.max(f64::MIN_POSITIVE) {
        Ok(Some(true))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NhEstimate {
    pub mean: f64,
    pub se: f64,
    pub n_paths: usize,
}

/// `α₁ = min(1, H + 0.2)`.
pub fn default_alpha1(hurst: f64) -> f64 {
    (hurst + 0.2).min(1.0)
}

/// Sup over the grid (and the `t → ∞` limit 1) of the ratio defining `N(H)`
/// for one path.
fn nh_sample(path: &FbmPath, a: f64, rho: f64, alpha1: f64, log_x1: f64) -> f64 {
    let two_h = 2.0 * path.hurst;
    let integrand = |n: usize| {
        let s = path.time(n);
        (-a * s - 0.5 * rho * rho * s.powf(two_h) + rho * path.values[n]).exp()
    };
    let acc = cumulative(path.dt, path.n_steps(), integrand);
    let mut best = 1.0f64;
    for (n, i) in acc.iter().enumerate() {
        let ta = path.time(n).powf(alpha1);
        best = best.max(((1.0 + i).ln() + ta) / (log_x1 + ta));
    }
    best
}

/// Monte-Carlo estimate of `N(H)` with its standard error.
#[allow(clippy::too_many_arguments)]
pub fn estimate_nh(
    params: &ModelParams,
    eig: &EigenPair,
    j0: f64,
    alpha1: f64,
    n_paths: usize,
    t_sup: f64,
    n_steps: usize,
    seed: u64,
) -> Result<NhEstimate> {
    if !(alpha1 > params.hurst) {
        return Err(Error::param("alpha1", format!("must exceed H = {}", params.hurst)));
    }
    if eig.lambda1 <= params.gamma {
        return Err(Error::Divergent(
            "lambda1 <= gamma: the inner integral diverges; blow-up is almost sure in this regime".into(),
        ));
    }
    if n_paths < 2 {
        return Err(Error::param("n_paths", "need at least 2 paths"));
    }
    let x = upper_threshold(params, eig, j0)?;
    let log_x1 = (x + 1.0).ln();
    let a = (eig.lambda1 - params.gamma) * (params.q - 1.0);
    let rho = params.sigma * (params.q - 1.0);
    let sampler = FbmSampler::new(params.hurst, t_sup, n_steps)?;
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| nh_sample(&sampler.sample(derive_seed(seed, i)), a, rho, alpha1, log_x1))
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(NhEstimate { mean, se: (var / n).sqrt(), n_paths })
}

/// `N(H)` for `σ = 0` by quadrature on a deterministic grid.
pub fn nh_deterministic(params: &ModelParams, eig: &EigenPair, j0: f64, alpha1: f64, t_sup: f64, n_steps: usize) -> Result<f64> {
    let x = upper_threshold(params, eig, j0)?;
    let a = (eig.lambda1 - params.gamma) * (params.q - 1.0);
    let path = FbmPath::zero(params.hurst, t_sup / n_steps as f64, n_steps);
    Ok(nh_sample(&path, a, 0.0, alpha1, (x + 1.0).ln()))
}

/// Lower bound on `P(τ_b < ∞)` from the Gaussian concentration estimate.
pub fn blowup_prob_lower_bound_fbm(
    params: &ModelParams,
    eig: &EigenPair,
    j0: f64,
    alpha1: f64,
    nh: f64,
) -> Result<f64> {
    if eig.lambda1 < params.gamma {
        return Ok(1.0);
    }
    if !(nh >= 1.0) {
        return Err(Error::param("nh", format!("N(H) must be >= 1, got {nh}")));
    }
    let rho = params.sigma * (params.q - 1.0);
    if !(rho > 0.0) {
        return Err(Error::param("sigma", "rho = sigma (q - 1) must be positive"));
    }
    let h = params.hurst;
    let x = upper_threshold(params, eig, j0)?;
    let l = (x + 1.0).ln();
    let m = (alpha1 - h) / alpha1;
    let expo = -(1.0 / (2.0 * rho * rho))
        * l.powf(2.0 * h / alpha1 - 2.0)
        * m.powf(2.0 - 2.0 * h / alpha1)
        * (nh - 1.0).powi(2);
    Ok((1.0 - expo.exp()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrownianBounds {
    pub vartheta: f64,
    pub theta1: f64,
    pub nu: f64,
    pub n_tilde: f64,
    /// Level of the Brownian upper stopping time.
    pub threshold: f64,
    pub prob_lower: f64,
    pub prob_upper: f64,
}

/// Gamma-law probability bounds for Brownian noise.
pub fn brownian_bounds(params: &ModelParams, eig: &EigenPair, j0: f64, f_sup: f64) -> Result<BrownianBounds> {
    check_exponents(params)?;
    let (q, sigma) = (params.q, params.sigma);
    if !(sigma > 0.0) || !(q > 1.0) {
        return Err(Error::param("sigma", "rho = sigma (q - 1) must be positive"));
    }
    let rho2 = (sigma * (q - 1.0)).powi(2);
    let vartheta = 0.5 * sigma * sigma - params.gamma;
    let theta1 = 2.0 * (eig.lambda1 + vartheta) * (q - 1.0) / rho2;
    let nu = 2.0 * vartheta * (q - 1.0) / rho2;
    if !(theta1 > 0.0) {
        return Err(Error::param("theta1", format!("must be positive, got {theta1}")));
    }
    if !(nu > 0.0) {
        return Err(Error::param("nu", format!("must be positive (needs sigma^2/2 > gamma), got {nu}")));
    }
    let factor = phi_holder_factor(eig, params)?;
    let lower_arg = params.delta * (q - 1.0) * factor / (rho2 * j0.powf(1.0 - q));
    let prob_lower = regularized_gamma_p(theta1, lower_arg)?;
    let n_tilde = 1.0 / (params.delta * DOMAIN_MEASURE * (q - 1.0) * f_sup.powf(q - 1.0));
    let prob_upper = regularized_gamma_p(nu, 2.0 / (rho2 * n_tilde))?;
    Ok(BrownianBounds {
        vartheta,
        theta1,
        nu,
        n_tilde,
        threshold: 2.0 * j0.powf(1.0 - q) / (params.delta * (q - 1.0) * factor),
        prob_lower,
        prob_upper,
    })
}

/// Quantile `y_p` of `1 / (2 X)`, `X ~ Gamma(a, 1)`: solves `Q(a, 1/(2y)) = p`.
pub fn inverse_gamma_half_quantile(a: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", "must lie in (0, 1)"));
    }
    // Q(a, z) decreases in z; find z with Q = p, then y = 1/(2z)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while regularized_gamma_q(a, hi)? > p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if regularized_gamma_q(a, mid)? > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 / (hi + lo))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub level: f64,
    pub empirical: f64,
    pub exact: f64,
    pub bootstrap_se: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Monte-Carlo check of `∫₀^∞ e^{2(W − ᾱt)} dt ~ 1/(2 Gamma(ᾱ, 1))` at the
/// given quantile levels, with bootstrap standard errors.
pub fn exponential_functional_quantiles(
    alpha_bar: f64,
    levels: &[f64],
    n_samples: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<QuantileRow>> {
    if n_samples < 10 {
        return Err(Error::param("n_samples", "need at least 10 samples"));
    }
    // 2(W(t) − ᾱt) = ρW(t) − a t with ρ = 2, a = 2ᾱ
    let w = ExpWeights { rho: 2.0, a: 2.0 * alpha_bar, gaussian_correction: false };
    let t_base = 16.0 / alpha_bar.min(1.0);
    let mut samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| exp_functional_infinite(0.5, dt, t_base, derive_seed(seed, i), w).map(|r| r.value))
        .collect::<Result<Vec<f64>>>()?;
    samples.sort_by(f64::total_cmp);

    const BOOTSTRAP: usize = 200;
    let mut rng = rng_from_seed(derive_seed(seed, u64::MAX));
    let mut boot: Vec<Vec<f64>> = vec![Vec::with_capacity(BOOTSTRAP); levels.len()];
    let mut resample = vec![0.0; n_samples];
    for _ in 0..BOOTSTRAP {
        for r in resample.iter_mut() {
            *r = samples[rng.gen_range(0..n_samples)];
        }
        resample.sort_by(f64::total_cmp);
        for (k, &lvl) in levels.iter().enumerate() {
            boot[k].push(quantile_sorted(&resample, lvl));
        }
    }
    levels
        .iter()
        .zip(&boot)
        .map(|(&level, bs)| {
            let m = bs.iter().sum::<f64>() / bs.len() as f64;
            let var = bs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (bs.len() - 1) as f64;
            Ok(QuantileRow {
                level,
                empirical: quantile_sorted(&samples, level),
                exact: inverse_gamma_half_quantile(alpha_bar, level)?,
                bootstrap_se: var.sqrt(),
            })
        })
        .collect()
}

/// SHA-256 over the JSON form of `(params, grid, seed)`.
pub fn inputs_digest(params: &ModelParams, grid: &GridSpec, seed: u64) -> String {
    let doc = serde_json::json!({ "params": params, "grid": grid, "seed": seed });
    let hash = Sha256::digest(doc.to_string().as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Options controlling the probability estimates in a [`BoundsReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsOptions {
    /// Amplitude used for the `f ≥ b φ₁` and admissibility checks.
    pub b: f64,
    pub alpha1: f64,
    pub nh_paths: usize,
    pub t_sup: f64,
    pub nh_steps: usize,
    pub t_cut: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub path_seed: u64,
    pub horizon: f64,
    pub f_sup: f64,
    pub lambda1: f64,
    pub m1: f64,
    pub b: f64,
    pub alpha1: f64,
    pub tau_lower: Option<HittingTime>,
    pub tau_upper: Option<HittingTime>,
    #[serde(rename = "J0")]
    pub j0: f64,
    pub c0: Option<f64>,
    pub b_condition_ok: Option<bool>,
    pub b_margin: Option<f64>,
    pub ic_dominates_b_phi1: bool,
    pub global_existence: Option<bool>,
    pub nh: Option<NhEstimate>,
    pub prob_lower_fbm: Option<f64>,
    pub prob_bounds_brownian: Option<(f64, f64)>,
    /// `p > q`, the regime stated for the upper bound.
    pub regime_p_gt_q: bool,
    /// `q > p`, the regime stated for the probability bound.
    pub regime_q_gt_p: bool,
    /// Items that could not be evaluated, with the reason.
    pub notes: Vec<String>,
    pub inputs_digest: String,
}

/// CSV header matching [`BoundsReport::csv_row`].
pub const BOUNDS_CSV_HEADER: &str = "path_seed,tau_lower,tau_upper,J0,c0,b_condition_ok,b_margin,global_existence,nh,prob_lower_fbm,prob_lower_brownian,prob_upper_brownian,inputs_digest";

fn opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl BoundsReport {
    pub fn csv_row(&self) -> String {
        [
            self.path_seed.to_string(),
            opt(self.tau_lower.and_then(|h| h.time)),
            opt(self.tau_upper.and_then(|h| h.time)),
            format!("{:?}", self.j0),
            opt(self.c0),
            opt(self.b_condition_ok),
            opt(self.b_margin),
            opt(self.global_existence),
            opt(self.nh.map(|n| n.mean)),
            opt(self.prob_lower_fbm),
            opt(self.prob_bounds_brownian.map(|b| b.0)),
            opt(self.prob_bounds_brownian.map(|b| b.1)),
            self.inputs_digest.clone(),
        ]
        .join(",")
    }
}

/// Evaluate every bound on one path. Items whose hypotheses fail are left
/// empty and explained in `notes`.
#[allow(clippy::too_many_arguments)]
pub fn bounds_report(
    params: &ModelParams,
    grid: &GridSpec,
    eig: &EigenPair,
    profile: &[f64],
    path: &FbmPath,
    f: &[f64],
    opts: &BoundsOptions,
) -> Result<BoundsReport> {
    let f_sup = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t = grid.t_final;
    let j0 = j0(f, eig);
    let mut notes = Vec::new();
    let mut note = |what: &str, e: &Error| notes.push(format!("{what}: {e}"));

    let tau_lower = tau_lower_bound(path, profile, params, f_sup, t).map_err(|e| note("tau_lower", &e)).ok();
    let upper = tau_upper_bound(path, eig, params, f, opts.b, t).map_err(|e| note("tau_upper", &e)).ok();
    let b1 = check_condition_b1(opts.b, t, path, params, eig, NoiseFamily::Fractional)
        .map_err(|e| note("b_condition", &e))
        .ok();
    let global_existence = global_existence_criterion(path, profile, params, f_sup, t.min(opts.t_cut))
        .map_err(|e| note("global_existence", &e))
        .ok()
        .flatten();

    let mut nh = None;
    let mut prob_lower_fbm = None;
    if eig.lambda1 < params.gamma {
        prob_lower_fbm = Some(1.0);
    } else {
        match estimate_nh(params, eig, j0, opts.alpha1, opts.nh_paths, opts.t_sup, opts.nh_steps, opts.seed) {
            Ok(est) => {
                nh = Some(est);
                prob_lower_fbm = blowup_prob_lower_bound_fbm(params, eig, j0, opts.alpha1, est.mean)
                    .map_err(|e| note("prob_lower_fbm", &e))
                    .ok();
            }
            Err(e) => note("nh", &e),
        }
    }
    let prob_bounds_brownian = brownian_bounds(params, eig, j0, f_sup)
        .map(|bb| (bb.prob_lower, bb.prob_upper))
        .map_err(|e| note("brownian_bounds", &e))
        .ok();

    Ok(BoundsReport {
        path_seed: path.seed,
        horizon: t,
        f_sup,
        lambda1: eig.lambda1,
        m1: eig.max(),
        b: opts.b,
        alpha1: opts.alpha1,
        tau_lower,
        tau_upper: upper.map(|u| u.hitting),
        j0,
        c0: upper.map(|u| u.c0),
        b_condition_ok: b1.map(|c| c.satisfied),
        b_margin: b1.map(|c| c.margin),
        ic_dominates_b_phi1: upper.map(|u| !u.precondition_violated).unwrap_or(false),
        global_existence,
        nh,
        prob_lower_fbm,
        prob_bounds_brownian,
        regime_p_gt_q: params.p > params.q,
        regime_q_gt_p: params.q > params.p,
        notes,
        inputs_digest: inputs_digest(params, grid, path.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::sample_fbm_path;
    use crate::operator::{build_fd_matrix, default_rho, principal_eigenpair, semigroup_sup_norm_profile, DEFAULT_EIGEN_TOL};
    use proptest::prelude::*;

    fn eig(m: usize) -> (crate::operator::FracOperator, EigenPair) {
        let op = build_fd_matrix(1.2, m, default_rho(1.2)).unwrap();
        let e = principal_eigenpair(&op, DEFAULT_EIGEN_TOL).unwrap();
        (op, e)
    }

    fn bracket_params() -> ModelParams {
        ModelParams { p: 2.0, q: 3.0, delta: 10.0, ..ModelParams::default() }
    }

    #[test]
    fn lower_bound_respects_contraction() {
        let params = ModelParams { sigma: 0.0, gamma: 0.0, delta: 1.0, q: 2.0, ..ModelParams::default() };
        let path = FbmPath::zero(0.6, 1e-3, 2000);
        let ones = vec![1.0; 2001];
        let h = tau_lower_bound(&path, &ones, &params, 1.0, 2.0).unwrap();
        // contraction bound: integral ≤ t, threshold 1/2
        assert!((h.time.unwrap() - 0.5).abs() < 1e-9);
        let (op, _) = eig(40);
        let prof = semigroup_sup_norm_profile(&op, 0.0, &path.values.iter().enumerate().map(|(n, _)| path.time(n)).collect::<Vec<_>>()).unwrap();
        let h = tau_lower_bound(&path, &prof, &params, 1.0, 2.0).unwrap();
        assert!(h.time.map_or(true, |t| t >= 0.5));
        let tiny = tau_lower_bound(&path, &prof, &params, 1e-6, 2.0).unwrap();
        assert!(!tiny.hit());
    }

    #[test]
    fn lower_bound_monotone_in_data_size() {
        let params = ModelParams::default();
        let path = sample_fbm_path(0.6, 1.0, 1000, 3).unwrap();
        let ones = vec![1.0; 1001];
        let mut last = 0.0;
        for f_sup in [8.0, 4.0, 2.0, 1.0] {
            let h = tau_lower_bound(&path, &ones, &params, f_sup, 1.0).unwrap();
            let t = h.time.unwrap_or(f64::INFINITY);
            assert!(t >= last);
            last = t;
        }
        assert!(tau_lower_bound(&path, &ones[..10], &params, 1.0, 1.0).is_err());
    }

    #[test]
    fn lower_bound_step_halving() {
        let params = ModelParams { delta: 3.0, ..ModelParams::default() };
        let (op, _) = eig(40);
        let fine = sample_fbm_path(0.6, 1.0, 2000, 5).unwrap();
        let coarse = FbmPath::from_increments(0.6, 2.0 * fine.dt, fine.values.iter().step_by(2).collect::<Vec<_>>().windows(2).map(|w| w[1] - w[0]).collect(), 5, fine.method);
        let tf: Vec<f64> = (0..=2000).map(|n| fine.time(n)).collect();
        let tc: Vec<f64> = (0..=1000).map(|n| coarse.time(n)).collect();
        let pf = semigroup_sup_norm_profile(&op, params.gamma, &tf).unwrap();
        let pc = semigroup_sup_norm_profile(&op, params.gamma, &tc).unwrap();
        let hf = tau_lower_bound(&fine, &pf, &params, 1.0, 1.0).unwrap().time.unwrap();
        let hc = tau_lower_bound(&coarse, &pc, &params, 1.0, 1.0).unwrap().time.unwrap();
        assert!((hf - hc).abs() <= coarse.dt + 1e-12, "{hf} vs {hc}");
    }

    #[test]
    fn envelope_properties() {
        let params = ModelParams { sigma: 0.0, delta: 2.0, ..ModelParams::default() };
        let path = FbmPath::zero(0.6, 1e-3, 3000);
        let (op, _) = eig(40);
        let t: Vec<f64> = (0..=3000).map(|n| path.time(n)).collect();
        let prof = semigroup_sup_norm_profile(&op, params.gamma, &t).unwrap();
        let f_sup = 1.0;
        let hit = tau_lower_bound(&path, &prof, &params, f_sup, 3.0).unwrap().time.unwrap();
        let env = growth_envelope(&path, &prof, &params, f_sup, hit - path.dt).unwrap();
        assert_eq!(env.g[0], 1.0);
        assert_eq!(env.upper[0], f_sup);
        assert!(env.g.windows(2).all(|w| w[1] > w[0]));
        let half = env.times.iter().position(|t| *t >= hit / 2.0).unwrap();
        assert!(*env.upper.last().unwrap() > 10.0 * env.upper[half]);
        match growth_envelope(&path, &prof, &params, f_sup, hit + 10.0 * path.dt) {
            Err(Error::BracketNonpositive { hit: h, .. }) => assert_eq!(h, hit),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn b1_monotonicity_and_vacuous_damping() {
        let (_, e) = eig(60);
        let params = bracket_params();
        let path = sample_fbm_path(0.6, 1.0, 500, 8).unwrap();
        let mut last = 0.0;
        for b in [1.1, 1.5, 2.0, 4.0] {
            let c = check_condition_b1(b, 0.5, &path, &params, &e, NoiseFamily::Fractional).unwrap();
            assert!(c.margin >= last);
            last = c.margin;
        }
        let mut last = f64::INFINITY;
        for t in [0.0, 0.25, 0.5, 1.0] {
            let c = check_condition_b1(2.0, t, &path, &params, &e, NoiseFamily::Fractional).unwrap();
            assert!(c.margin <= last);
            last = c.margin;
        }
        let nodamp = ModelParams { beta: 0.0, ..params.clone() };
        let c = check_condition_b1(2.0, 0.5, &path, &nodamp, &e, NoiseFamily::Fractional).unwrap();
        assert!(c.second_ratio.is_infinite());
        let same = ModelParams { q: 2.0, ..params.clone() };
        assert!(check_condition_b1(2.0, 0.5, &path, &same, &e, NoiseFamily::Fractional).is_err());
        assert!(check_condition_b1(0.5, 0.5, &path, &params, &e, NoiseFamily::Fractional).is_err());
        let br = check_condition_b1(2.0, 0.5, &path, &params, &e, NoiseFamily::Brownian).unwrap();
        assert!(br.first_ratio.is_finite());
    }

    #[test]
    fn upper_bound_constant_integrand() {
        let (_, e) = eig(60);
        let params = ModelParams { sigma: 0.0, gamma: e.lambda1, ..bracket_params() };
        let path = FbmPath::zero(0.6, 1e-4, 100_000);
        let f: Vec<f64> = e.phi1.iter().map(|v| 3.0 * v).collect();
        let u = tau_upper_bound(&path, &e, &params, &f, 2.0, 10.0).unwrap();
        let x = upper_threshold(&params, &e, u.j0).unwrap();
        assert!((u.hitting.time.unwrap() - x).abs() <= path.dt);
        assert!(!u.precondition_violated);
        assert!((u.j0 - 3.0 * e.power_integral(2.0)).abs() < 1e-3);
        let g = tau_upper_bound(&path, &e, &params, &f, 5.0, 10.0).unwrap();
        assert!(g.precondition_violated);
    }

    #[test]
    fn upper_bound_hits_when_growth_dominates() {
        let (_, e) = eig(60);
        let params = ModelParams { sigma: 0.0, gamma: e.lambda1 + 1.0, ..bracket_params() };
        let path = FbmPath::zero(0.6, 1e-2, 3000);
        let f: Vec<f64> = e.phi1.iter().map(|v| 0.01 * v).collect();
        assert!(tau_upper_bound(&path, &e, &params, &f, 1.0 + 1e-9, 30.0).unwrap().hitting.hit());
    }

    #[test]
    fn bernoulli_profile_starts_at_j0_and_diverges() {
        let (_, e) = eig(60);
        let params = bracket_params();
        let path = sample_fbm_path(0.6, 2.0, 2000, 4).unwrap();
        let f: Vec<f64> = e.phi1.iter().map(|v| 2.0 * v).collect();
        let u = tau_upper_bound(&path, &e, &params, &f, 1.5, 2.0).unwrap();
        let tau = u.hitting.time.expect("preset hits");
        let prof = bernoulli_lower_profile(&path, &e, &params, u.j0, tau - path.dt).unwrap();
        assert!((prof[0] - u.j0).abs() < 1e-12 * u.j0);
        assert!(*prof.last().unwrap() > 5.0 * prof[0]);
        assert!(matches!(
            bernoulli_lower_profile(&path, &e, &params, u.j0, tau + 5.0 * path.dt),
            Err(Error::BracketNonpositive { .. })
        ));
    }

    #[test]
    fn global_existence_examples() {
        let path = FbmPath::zero(0.6, 0.01, 4000);
        let (op, e) = eig(40);
        let params = ModelParams { sigma: 0.0, gamma: -e.lambda1 - 1.0, ..ModelParams::default() };
        let t: Vec<f64> = (0..=4000).map(|n| path.time(n)).collect();
        let prof = semigroup_sup_norm_profile(&op, params.gamma, &t).unwrap();
        assert_eq!(global_existence_criterion(&path, &prof, &params, 0.01, 40.0).unwrap(), Some(true));
        assert_eq!(global_existence_criterion(&path, &prof, &params, 50.0, 40.0).unwrap(), Some(false));
        assert_eq!(global_existence_criterion(&path, &prof, &params, 0.0, 40.0).unwrap(), Some(true));
        let nodelta = ModelParams { delta: 0.0, ..params.clone() };
        assert_eq!(global_existence_criterion(&path, &prof, &nodelta, 50.0, 40.0).unwrap(), Some(true));
        // a short window leaves the tail undecided
        assert_eq!(global_existence_criterion(&path, &prof, &params, 0.01, 0.5).unwrap(), None);
    }

    #[test]
    fn nh_is_at_least_one_and_matches_quadrature_for_small_noise() {
        let (_, e) = eig(40);
        let params = ModelParams { p: 2.0, q: 3.0, sigma: 1e-4, ..ModelParams::default() };
        let f: Vec<f64> = e.phi1.iter().map(|v| 2.0 * v).collect();
        let j = j0(&f, &e);
        let a1 = default_alpha1(params.hurst);
        let est = estimate_nh(&params, &e, j, a1, 50, 10.0, 2000, 1).unwrap();
        assert!(est.mean >= 1.0);
        let det = nh_deterministic(&ModelParams { sigma: 0.0, ..params.clone() }, &e, j, a1, 10.0, 2000).unwrap();
        assert!((est.mean - det).abs() < 1e-3 * det, "{} vs {det}", est.mean);
    }

    #[test]
    fn nh_standard_error_scales() {
        let (_, e) = eig(40);
        let params = ModelParams { p: 2.0, q: 3.0, sigma: 0.5, ..ModelParams::default() };
        let f: Vec<f64> = e.phi1.iter().map(|v| 2.0 * v).collect();
        let j = j0(&f, &e);
        let small = estimate_nh(&params, &e, j, 0.8, 400, 5.0, 500, 3).unwrap();
        let large = estimate_nh(&params, &e, j, 0.8, 1600, 5.0, 500, 3).unwrap();
        let ratio = small.se / large.se;
        assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
        let divergent = ModelParams { gamma: e.lambda1 + 0.1, ..params.clone() };
        assert!(matches!(estimate_nh(&divergent, &e, j, 0.8, 10, 1.0, 100, 0), Err(Error::Divergent(_))));
        assert!(estimate_nh(&params, &e, j, 0.5, 10, 1.0, 100, 0).is_err());
    }

    #[test]
    fn fbm_probability_bound_examples() {
        let (_, e) = eig(40);
        let params = ModelParams { p: 2.0, q: 3.0, ..ModelParams::default() };
        let j = 1.0;
        assert_eq!(blowup_prob_lower_bound_fbm(&params, &e, j, 0.8, 1.0).unwrap(), 0.0);
        let mut last = 0.0;
        for nh in [1.0, 1.1, 1.5, 3.0, 10.0] {
            let v = blowup_prob_lower_bound_fbm(&params, &e, j, 0.8, nh).unwrap();
            assert!((0.0..=1.0).contains(&v) && v >= last);
            last = v;
        }
        assert!(blowup_prob_lower_bound_fbm(&params, &e, j, 0.8, 0.9).is_err());
        let growth = ModelParams { gamma: e.lambda1 + 0.5, ..params };
        assert_eq!(blowup_prob_lower_bound_fbm(&growth, &e, j, 0.8, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn brownian_exponential_special_case() {
        let (_, e) = eig(40);
        let sigma = 1.0;
        let q = 3.0;
        let rho2 = (sigma * (q - 1.0)) * (sigma * (q - 1.0));
        // choose γ so that ν = 2ϑ(q−1)/ρ² = 1
        let vartheta = rho2 / (2.0 * (q - 1.0));
        let params = ModelParams { sigma, q, p: 2.0, gamma: 0.5 * sigma * sigma - vartheta, ..ModelParams::default() };
        let bb = brownian_bounds(&params, &e, 1.0, 1.5).unwrap();
        assert!((bb.nu - 1.0).abs() < 1e-12);
        let expect = 1.0 - (-2.0 / (rho2 * bb.n_tilde)).exp();
        assert!((bb.prob_upper - expect).abs() < 1e-12);
        let bad = ModelParams { sigma: 0.1, gamma: 0.1, ..params.clone() };
        assert!(brownian_bounds(&bad, &e, 1.0, 1.5).unwrap_err().to_string().contains("nu"));
    }

    #[test]
    fn quantile_inversion() {
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let y = inverse_gamma_half_quantile(1.0, p).unwrap();
            assert!((y + 1.0 / (2.0 * p.ln())).abs() < 1e-10);
        }
    }

    #[test]
    fn digest_tracks_inputs() {
        let p = ModelParams::default();
        let g = GridSpec::default();
        assert_eq!(inputs_digest(&p, &g, 1), inputs_digest(&p, &g, 1));
        assert_ne!(inputs_digest(&p, &g, 1), inputs_digest(&p, &g, 2));
        assert_eq!(inputs_digest(&p, &g, 1).len(), 64);
    }

    #[test]
    fn report_notes_unavailable_items() {
        let (op, e) = eig(40);
        let params = ModelParams::default();
        let grid = GridSpec::new(40, 200, 1.0);
        let path = sample_fbm_path(0.6, 1.0, 200, 1).unwrap();
        let t: Vec<f64> = (0..=200).map(|n| path.time(n)).collect();
        let prof = semigroup_sup_norm_profile(&op, params.gamma, &t).unwrap();
        let opts = BoundsOptions { b: 1.5, alpha1: 0.8, nh_paths: 8, t_sup: 2.0, nh_steps: 200, t_cut: 1.0, seed: 0 };
        let r = bounds_report(&params, &grid, &e, &prof, &path, &e.phi1, &opts).unwrap();
        // p = q: upper-bound machinery is undefined
        assert!(r.tau_upper.is_none());
        assert!(r.notes.iter().any(|n| n.starts_with("tau_upper")));
        assert!(r.tau_lower.is_some());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"J0\""));
        assert_eq!(r.csv_row().split(',').count(), BOUNDS_CSV_HEADER.split(',').count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn brownian_bounds_are_probabilities(
            sigma in 0.5f64..3.0, q in 1.2f64..4.0, p in 1.1f64..4.0,
            gamma in -1.0f64..0.1, delta in 0.1f64..10.0, j in 0.05f64..5.0, f_sup in 0.1f64..5.0,
        ) {
            prop_assume!((p - q).abs() > 0.05);
            let (_, e) = eig(20);
            let params = ModelParams { sigma, q, p, gamma, delta, ..ModelParams::default() };
            if let Ok(bb) = brownian_bounds(&params, &e, j, f_sup) {
                prop_assert!((0.0..=1.0).contains(&bb.prob_lower));
                prop_assert!((0.0..=1.0).contains(&bb.prob_upper));
            }
        }
    }
}
