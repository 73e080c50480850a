//! Statistical checks of the fBm sampler.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm::{fgn_autocovariance, FbmSampler, SamplingMethod};
use crate::seeding::derive_seed;

const CHECKED_LAGS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagCheck {
    pub lag: usize,
    pub empirical: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FbmDiagnostics {
    pub hurst: f64,
    pub method: SamplingMethod,
    pub n_paths: usize,
    pub n_steps: usize,
    pub t_final: f64,
    /// Sample variance of `B(T)` and its target `T^{2H}`.
    pub var_terminal: f64,
    pub var_expected: f64,
    pub var_se: f64,
    pub var_z: f64,
    /// Pooled lag-1 correlation of increments, its target and the 3σ band.
    pub lag1_corr: f64,
    pub lag1_expected: f64,
    pub lag1_band: f64,
    /// Increment autocovariances normalised by `dt^{2H}`.
    pub autocovariance: Vec<LagCheck>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub variance_ok: bool,
    pub correlation_ok: bool,
}

impl FbmDiagnostics {
    pub fn passed(&self) -> bool {
        self.variance_ok && self.correlation_ok
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.s1 += x;
        self.s2 += x * x;
        self.s3 += x * x * x;
        self.s4 += x * x * x * x;
    }

    fn merge(self, o: Self) -> Self {
        Self { n: self.n + o.n, s1: self.s1 + o.s1, s2: self.s2 + o.s2, s3: self.s3 + o.s3, s4: self.s4 + o.s4 }
    }
}

struct PathSums {
    terminal: Moments,
    // Σ dB_k dB_{k+l} and pair counts per lag, Σ dB, Σ dB²
    cross: [f64; CHECKED_LAGS + 1],
    pairs: [f64; CHECKED_LAGS + 1],
}

/// Sample `n_paths` paths and compare their second-order structure with the
/// exact fBm law.
pub fn fbm_diagnostics(hurst: f64, t_final: f64, n_steps: usize, n_paths: usize, seed: u64) -> Result<FbmDiagnostics> {
    if n_paths < 10 {
        return Err(Error::param("n_paths", "need at least 10 paths"));
    }
    let sampler = FbmSampler::new(hurst, t_final, n_steps)?;
    let scale = sampler.dt().powf(2.0 * hurst);
    let sums: Vec<PathSums> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sampler.sample(derive_seed(seed, i));
            let mut terminal = Moments::default();
            terminal.push(*path.values.last().unwrap());
            let mut cross = [0.0; CHECKED_LAGS + 1];
            let mut pairs = [0.0; CHECKED_LAGS + 1];
            let d = &path.increments;
            for lag in 0..=CHECKED_LAGS.min(d.len() - 1) {
                cross[lag] = d.iter().zip(&d[lag..]).map(|(a, b)| a * b).sum();
                pairs[lag] = (d.len() - lag) as f64;
            }
            PathSums { terminal, cross, pairs }
        })
        .collect();

    let m = sums.iter().fold(Moments::default(), |acc, s| acc.merge(s.terminal));
    let n = m.n;
    let mean = m.s1 / n;
    let var = (m.s2 - n * mean * mean) / (n - 1.0);
    // increments are centred, so raw moments estimate the covariances
    let c2 = m.s2 / n;
    let c4 = m.s4 / n;
    let var_se = ((c4 - c2 * c2) / n).sqrt();
    let var_expected = t_final.powf(2.0 * hurst);
    let var_z = (var - var_expected) / var_se;
    let skewness = (m.s3 / n) / c2.powf(1.5);
    let excess_kurtosis = c4 / (c2 * c2) - 3.0;

    let exact = fgn_autocovariance(hurst, CHECKED_LAGS, 1.0)?;
    let mut autocovariance = Vec::new();
    for lag in 0..=CHECKED_LAGS.min(n_steps - 1) {
        let num: f64 = sums.iter().map(|s| s.cross[lag]).sum();
        let cnt: f64 = sums.iter().map(|s| s.pairs[lag]).sum();
        autocovariance.push(LagCheck { lag, empirical: num / cnt / scale, exact: exact[lag] });
    }
    let lag1_corr = autocovariance[1].empirical / autocovariance[0].empirical;
    let lag1_expected = exact[1] / exact[0];
    let n_pairs: f64 = sums.iter().map(|s| s.pairs[1]).sum();
    let lag1_band = 3.0 / n_pairs.sqrt();

    Ok(FbmDiagnostics {
        hurst,
        method: sampler.method(),
        n_paths,
        n_steps,
        t_final,
        var_terminal: var,
        var_expected,
        var_se,
        var_z,
        lag1_corr,
        lag1_expected,
        lag1_band,
        autocovariance,
        skewness,
        excess_kurtosis,
        variance_ok: var_z.abs() <= 3.0,
        correlation_ok: hurst != 0.5 || lag1_corr.abs() < lag1_band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brownian_increments_are_uncorrelated() {
        let d = fbm_diagnostics(0.5, 1.0, 64, 2000, 11).unwrap();
        assert!(d.passed(), "{d:?}");
        assert_eq!(d.lag1_expected, 0.0);
        assert!(d.excess_kurtosis.abs() < 0.5);
    }

    #[test]
    fn persistent_increments_match_covariance() {
        let d = fbm_diagnostics(0.8, 2.0, 128, 2000, 2).unwrap();
        assert!(d.variance_ok, "{d:?}");
        assert!((d.var_expected - 2f64.powf(1.6)).abs() < 1e-12);
        for l in &d.autocovariance {
            assert!((l.empirical - l.exact).abs() < 0.03, "{l:?}");
        }
    }

    #[test]
    fn rejects_tiny_ensembles() {
        assert!(fbm_diagnostics(0.6, 1.0, 16, 5, 0).is_err());
    }
}
