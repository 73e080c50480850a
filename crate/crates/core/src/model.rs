//! Model coefficients and discretisation grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::default_rho;

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 4.5036e15;

/// Shape of the multiplicative noise coefficient `σ(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// `σ(u) = σ u`
    Linear,
    /// `σ(u) = σ u / (1 + |u|)`
    Saturating,
}

/// How a sampled fBm increment enters one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `Δt·B_h = σ(u) ΔB^H_n`: an Euler step of the Young integral.
    Increment,
    /// `Δt·B_h = σ(u) ΔB^H_n / Δt^H`: the increment normalised to unit
    /// variance per step.
    UnitFgn,
}

impl NoiseShape {
    #[inline]
    pub fn eval(self, sigma: f64, u: f64) -> f64 {
        match self {
            NoiseShape::Linear => sigma * u,
            NoiseShape::Saturating => sigma * u / (1.0 + u.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub delta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub sigma: f64,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub hurst: f64,
    pub noise_shape: NoiseShape,
    pub noise_scaling: NoiseScaling,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            gamma: 0.1,
            beta: 1.0,
            sigma: 0.1,
            p: 2.0,
            q: 2.0,
            alpha: 1.2,
            hurst: 0.6,
            noise_shape: NoiseShape::Linear,
            noise_scaling: NoiseScaling::Increment,
        }
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

impl ModelParams {
    /// `q = 1` is accepted (the nonlocal term is then linear); every other
    /// exponent bound is strict.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("p", self.p),
            ("q", self.q),
            ("alpha", self.alpha),
            ("hurst", self.hurst),
        ] {
            finite(name, v)?;
        }
        if self.delta < 0.0 {
            return Err(Error::param("delta", "must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::param("beta", "must be >= 0"));
        }
        if self.sigma < 0.0 {
            return Err(Error::param("sigma", "must be >= 0"));
        }
        if self.p <= 1.0 {
            return Err(Error::param("p", format!("must be > 1, got {}", self.p)));
        }
        if self.q < 1.0 {
            return Err(Error::param("q", format!("must be >= 1, got {}", self.q)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 2], got {}", self.alpha)));
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::param("hurst", format!("must lie in the open interval (0, 1), got {}", self.hurst)));
        }
        Ok(())
    }

    #[inline]
    pub fn noise(&self, u: f64) -> f64 {
        self.noise_shape.eval(self.sigma, u)
    }
}

/// Uniform space-time grid on `[-1, 1] × [0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of spatial intervals; `M - 1` interior nodes.
    pub m: usize,
    /// Number of time steps.
    pub n: usize,
    pub t_final: f64,
    pub blowup_threshold: f64,
    /// Splitting parameter of the fractional stencil; `1 + α/2` when unset.
    pub rho_scheme: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            m: 101,
            n: 10_000,
            t_final: 1.0,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            rho_scheme: None,
        }
    }
}

impl GridSpec {
    pub fn new(m: usize, n: usize, t_final: f64) -> Self {
        Self {
            m,
            n,
            t_final,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 8 {
            return Err(Error::param("m", format!("need at least 8 intervals, got {}", self.m)));
        }
        if self.n < 2 {
            return Err(Error::param("n", format!("need at least 2 time steps, got {}", self.n)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::param("t_final", "must be positive and finite"));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::param("blowup_threshold", "must be positive"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 / self.m as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n as f64
    }

    pub fn rho_for(&self, alpha: f64) -> f64 {
        self.rho_scheme.unwrap_or_else(|| default_rho(alpha))
    }

    /// `t_n = n Δt` for `n = 0..=N`.
    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n).map(|k| k as f64 * dt).collect()
    }

    /// Same horizon with `Δt` and `Δx` both halved.
    pub fn refined(&self) -> Self {
        Self {
            m: 2 * self.m,
            n: 2 * self.n,
            ..self.clone()
        }
    }
}
