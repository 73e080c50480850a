//! Fractional Brownian motion on a uniform time grid.
//!
//! Fractional Gaussian noise is drawn exactly by circulant embedding of its
//! autocovariance (Davies–Harte / Dietrich–Newsam) and summed to a path.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeding::rng_from_seed;

/// Relative tolerance below which negative circulant eigenvalues are rounding.
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
/// Largest exponent passed to `exp` before reporting overflow.
const MAX_EXPONENT: f64 = 709.0;
const TAIL_RATIO: f64 = 1e-12;
const MAX_EXTENSION: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Independent,
    CirculantEmbedding,
    /// Circulant embedding had a significantly negative eigenvalue.
    Cholesky,
}

#[derive(Debug, Clone)]
pub struct FbmPath {
    pub hurst: f64,
    pub dt: f64,
    /// `B^H(t_n)` for `n = 0..=N`.
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    pub seed: u64,
    pub method: SamplingMethod,
}

impl FbmPath {
    /// Build a path from increments by cumulative summation.
    pub fn from_increments(hurst: f64, dt: f64, increments: Vec<f64>, seed: u64, method: SamplingMethod) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for d in &increments {
            acc += d;
            values.push(acc);
        }
        // keep increments[n] == values[n+1] - values[n] exactly
        let increments = values.windows(2).map(|w| w[1] - w[0]).collect();
        Self {
            hurst,
            dt,
            values,
            increments,
            seed,
            method,
        }
    }

    /// The identically zero path.
    pub fn zero(hurst: f64, dt: f64, n: usize) -> Self {
        Self::from_increments(hurst, dt, vec![0.0; n], 0, SamplingMethod::Independent)
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// CSV with columns `n,t,B,dB,Bstar`; `dB` is empty on the last row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let sup = running_sup_abs(self);
        writeln!(w, "n,t,B,dB,Bstar")?;
        for (n, b) in self.values.iter().enumerate() {
            let db = self.increments.get(n).map(|d| format!("{d:?}")).unwrap_or_default();
            writeln!(w, "{},{:?},{:?},{},{:?}", n, self.time(n), b, db, sup[n])?;
        }
        Ok(())
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::param("hurst", format!("must lie in the open interval (0, 1), got {h}")))
    }
}

/// Autocovariance `γ(0..=n_lags)` of fractional Gaussian noise with step `dt`.
pub fn fgn_autocovariance(h: f64, n_lags: usize, dt: f64) -> Result<Vec<f64>> {
    check_hurst(h)?;
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    let two_h = 2.0 * h;
    let scale = dt.powf(two_h);
    Ok((0..=n_lags)
        .map(|k| {
            let k = k as f64;
            0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h)) * scale
        })
        .collect())
}

/// Reusable sampler for paths sharing `(H, N, dt)`.
///
/// Construction does the eigen-decomposition once; sampling is pure in the
/// seed and safe to call from many threads.
#[derive(Clone)]
pub struct FbmSampler {
    hurst: f64,
    n: usize,
    dt: f64,
    kind: SamplerKind,
}

#[derive(Clone)]
enum SamplerKind {
    Independent,
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { factor: DMatrix<f64> },
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmSampler")
            .field("hurst", &self.hurst)
            .field("n", &self.n)
            .field("dt", &self.dt)
            .field("method", &self.method())
            .finish()
    }
}

fn check_grid(t_final: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::param("n", format!("need at least 2 steps, got {n}")));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::param("t_final", "must be positive and finite"));
    }
    Ok(())
}

impl FbmSampler {
    pub fn new(hurst: f64, t_final: f64, n: usize) -> Result<Self> {
        check_hurst(hurst)?;
        check_grid(t_final, n)?;
        let dt = t_final / n as f64;
        if hurst == 0.5 {
            return Ok(Self { hurst, n, dt, kind: SamplerKind::Independent });
        }
        let len = (2 * (n + 1)).next_power_of_two();
        let half = len / 2;
        let gam = fgn_autocovariance(hurst, half, 1.0)?;
        let mut buf: Vec<Complex64> = (0..len)
            .map(|k| Complex64::new(if k <= half { gam[k] } else { gam[len - k] }, 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(len);
        fft.process(&mut buf);
        let max = buf.iter().map(|c| c.re).fold(0.0, f64::max);
        let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min < -NEGATIVE_EIGEN_TOL * max {
            log::warn!("circulant embedding not nonnegative (min {min:e}); using Cholesky for H = {hurst}");
            return Self::cholesky(hurst, t_final, n);
        }
        let sqrt_eig = buf.iter().map(|c| (c.re.max(0.0) / len as f64).sqrt()).collect();
        Ok(Self { hurst, n, dt, kind: SamplerKind::Circulant { sqrt_eig, fft } })
    }

    /// Sampler backed by a Cholesky factor of the `N × N` fGn covariance.
    pub fn cholesky(hurst: f64, t_final: f64, n: usize) -> Result<Self> {
        check_hurst(hurst)?;
        check_grid(t_final, n)?;
        let dt = t_final / n as f64;
        let gam = fgn_autocovariance(hurst, n, 1.0)?;
        let cov = DMatrix::from_fn(n, n, |i, j| gam[i.abs_diff(j)]);
        let factor = cov.cholesky().ok_or(Error::CholeskyFailed)?.unpack();
        Ok(Self { hurst, n, dt, kind: SamplerKind::Cholesky { factor } })
    }

    pub fn method(&self) -> SamplingMethod {
        match self.kind {
            SamplerKind::Independent => SamplingMethod::Independent,
            SamplerKind::Circulant { .. } => SamplingMethod::CirculantEmbedding,
            SamplerKind::Cholesky { .. } => SamplingMethod::Cholesky,
        }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn sample(&self, seed: u64) -> FbmPath {
        let mut rng = rng_from_seed(seed);
        let scale = self.dt.powf(self.hurst);
        let increments: Vec<f64> = match &self.kind {
            SamplerKind::Independent => (0..self.n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            SamplerKind::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..self.n].iter().map(|c| scale * c.re).collect()
            }
            SamplerKind::Cholesky { factor } => {
                let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
                (factor * z).iter().map(|v| scale * v).collect()
            }
        };
        FbmPath::from_increments(self.hurst, self.dt, increments, seed, self.method())
    }
}

/// One fBm path on `N` steps of `[0, T]`, deterministic in `seed`.
pub fn sample_fbm_path(hurst: f64, t_final: f64, n: usize, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(hurst, t_final, n)?.sample(seed))
}

/// `B*(t_n) = max_{k ≤ n} |B(t_k)|`.
pub fn running_sup_abs(path: &FbmPath) -> Vec<f64> {
    let mut m = 0.0f64;
    path.values
        .iter()
        .map(|v| {
            m = m.max(v.abs());
            m
        })
        .collect()
}

/// Trapezoid value of `∫₀^{T_cut} exp{ρB(s) − as − [ρ²s^{2H}/2]} ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFunctional {
    pub value: f64,
    /// Integrand at the upper limit.
    pub tail: f64,
    pub t_cut: f64,
    /// For the adaptive variant: whether the tail fell below the tolerance
    /// before the extension cap.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpWeights {
    pub rho: f64,
    pub a: f64,
    pub gaussian_correction: bool,
}

impl ExpWeights {
    #[inline]
    fn exponent(&self, b: f64, s: f64, two_h: f64) -> f64 {
        let mut e = self.rho * b - self.a * s;
        if self.gaussian_correction {
            e -= 0.5 * self.rho * self.rho * s.powf(two_h);
        }
        e
    }
}

fn checked_exp(e: f64, t: f64) -> Result<f64> {
    if e > MAX_EXPONENT || e.is_nan() {
        Err(Error::Overflow { time: t })
    } else {
        Ok(e.exp())
    }
}

/// Integrand `exp{…}` at every grid node `0..=N`.
pub fn exp_integrand(path: &FbmPath, w: ExpWeights) -> Result<Vec<f64>> {
    let two_h = 2.0 * path.hurst;
    path.values
        .iter()
        .enumerate()
        .map(|(n, b)| {
            let t = path.time(n);
            checked_exp(w.exponent(*b, t, two_h), t)
        })
        .collect()
}

/// Trapezoid on the path grid up to `t_cut` (≤ horizon); a partial last
/// panel uses a linearly interpolated path value.
pub fn exp_functional(path: &FbmPath, w: ExpWeights, t_cut: f64) -> Result<ExpFunctional> {
    exp_functional_strided(path, w, t_cut, 1)
}

/// As [`exp_functional`] but only every `stride`-th grid node is used.
pub fn exp_functional_strided(path: &FbmPath, w: ExpWeights, t_cut: f64, stride: usize) -> Result<ExpFunctional> {
    if stride == 0 {
        return Err(Error::param("stride", "must be positive"));
    }
    let horizon = path.horizon();
    if !(t_cut >= 0.0) || t_cut > horizon * (1.0 + 1e-12) {
        return Err(Error::param("t_cut", format!("must lie in [0, {horizon}], got {t_cut}")));
    }
    let two_h = 2.0 * path.hurst;
    let h = stride as f64 * path.dt;
    let eval = |b: f64, t: f64| checked_exp(w.exponent(b, t, two_h), t);
    let full = ((t_cut / h) * (1.0 + 1e-12)).floor() as usize;
    let full = full.min(path.n_steps() / stride);
    let mut prev = eval(path.values[0], 0.0)?;
    let mut acc = 0.0;
    for k in 1..=full {
        let n = k * stride;
        let cur = eval(path.values[n], path.time(n))?;
        acc += 0.5 * h * (prev + cur);
        prev = cur;
    }
    let t_full = full as f64 * h;
    let rest = t_cut - t_full;
    let mut tail = prev;
    if rest > 1e-12 * h {
        let n0 = full * stride;
        let n1 = (n0 + stride).min(path.n_steps());
        let frac = rest / (path.time(n1) - path.time(n0));
        let b = path.values[n0] + frac * (path.values[n1] - path.values[n0]);
        let cur = eval(b, t_cut)?;
        acc += 0.5 * rest * (prev + cur);
        tail = cur;
    }
    Ok(ExpFunctional { value: acc, tail, t_cut, converged: true })
}

/// `∫₀^∞` on one path, integrated until the endpoint integrand is below
/// `1e-12` of the accumulated value, capped at `64 · t_base`.
///
/// Brownian paths are extended with fresh increments in blocks of `t_base`;
/// other Hurst indices are sampled once on the capped horizon. Either way
/// the stopping rule never discards a path.
pub fn exp_functional_infinite(
    hurst: f64,
    dt: f64,
    t_base: f64,
    seed: u64,
    w: ExpWeights,
) -> Result<ExpFunctional> {
    if !(w.a > 0.0) {
        return Err(Error::Divergent(format!(
            "decay rate a = {} is not positive, so the integral over [0, inf) diverges",
            w.a
        )));
    }
    if !(dt > 0.0 && t_base > 0.0) {
        return Err(Error::param("t_base", "horizon and step must be positive"));
    }
    check_hurst(hurst)?;
    let block = ((t_base / dt).round() as usize).max(2);
    let cap = MAX_EXTENSION as usize * block;
    let two_h = 2.0 * hurst;
    let eval = |b: f64, t: f64| checked_exp(w.exponent(b, t, two_h), t);
    let mut acc = 0.0;
    let mut b = 0.0;
    let mut prev = eval(0.0, 0.0)?;
    let mut n = 0usize;
    let step = |b_next: f64, n: usize, prev: &mut f64, acc: &mut f64| -> Result<bool> {
        let t = n as f64 * dt;
        let cur = eval(b_next, t)?;
        *acc += 0.5 * dt * (*prev + cur);
        *prev = cur;
        Ok(n % block == 0 && cur < TAIL_RATIO * *acc)
    };
    if hurst == 0.5 {
        let mut rng = rng_from_seed(seed);
        let scale = dt.sqrt();
        while n < cap {
            n += 1;
            b += scale * rng.sample::<f64, _>(StandardNormal);
            if step(b, n, &mut prev, &mut acc)? {
                return Ok(ExpFunctional { value: acc, tail: prev, t_cut: n as f64 * dt, converged: true });
            }
        }
    } else {
        let path = sample_fbm_path(hurst, cap as f64 * dt, cap, seed)?;
        while n < cap {
            n += 1;
            if step(path.values[n], n, &mut prev, &mut acc)? {
                return Ok(ExpFunctional { value: acc, tail: prev, t_cut: n as f64 * dt, converged: true });
            }
        }
    }
    log::warn!("exponential functional tail {prev:e} not converged at T = {}", cap as f64 * dt);
    Ok(ExpFunctional { value: acc, tail: prev, t_cut: cap as f64 * dt, converged: false })
}
