//! Discrete Dirichlet fractional Laplacian on `[-1, 1]`, its principal
//! eigenpair, and sup-norm profiles of the generated semigroup.
//!
//! The matrix follows the weighted-trapezoid finite-difference scheme for
//! `(-Δ)^s` with `s = α/2`: entries depend only on `|i - j|`, with splitting
//! parameter `ρ ∈ (2s, 2]`, `χ = ρ - 2s`, and overall factor
//! `C_{1,2s} / (χ Δx^{2s})`. At `α = 2` the classical three-point Laplacian
//! is used instead.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::linalg::ImplicitStep;
use crate::quadrature;

pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
pub const MAX_EIGEN_ITERATIONS: usize = 10_000;
const PROFILE_MAX_SUBSTEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discretization {
    /// Weighted finite-difference scheme for `0 < α < 2`.
    Fractional,
    /// Three-point Laplacian, used at `α = 2`.
    Classical,
}

/// Matrix `A ≈ Δ_α = -(-Δ)^{α/2}` on the `M - 1` interior nodes of `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct FracOperator {
    alpha: f64,
    m: usize,
    dx: f64,
    rho_scheme: f64,
    c_norm: f64,
    discretization: Discretization,
    matrix: DMatrix<f64>,
}

/// Default splitting parameter `ρ = 1 + α/2`.
pub fn default_rho(alpha: f64) -> f64 {
    1.0 + 0.5 * alpha
}

/// Normalising constant of `(-Δ)^{order/2}` in one dimension.
pub fn fractional_constant(order: f64) -> f64 {
    order * 2f64.powf(order - 1.0) * gamma(0.5 * (1.0 + order))
        / (std::f64::consts::PI.sqrt() * gamma(1.0 - 0.5 * order))
}

/// Build the discrete operator for exponent `alpha` on `m` intervals.
pub fn build_fd_matrix(alpha: f64, m: usize, rho_scheme: f64) -> Result<FracOperator> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 2], got {alpha}")));
    }
    if m < 8 {
        return Err(Error::param("m", format!("need at least 8 intervals, got {m}")));
    }
    let n = m - 1;
    let dx = 2.0 / m as f64;

    if alpha == 2.0 {
        return Ok(FracOperator {
            alpha,
            m,
            dx,
            rho_scheme: 2.0,
            c_norm: 1.0,
            discretization: Discretization::Classical,
            matrix: classical_laplacian(m),
        });
    }

    let s = 0.5 * alpha;
    let rho = rho_scheme;
    if !(rho > 2.0 * s && rho <= 2.0) {
        return Err(Error::param(
            "rho_scheme",
            format!("must lie in ({}, 2] for alpha = {alpha}, got {rho}", 2.0 * s),
        ));
    }
    let chi = rho - 2.0 * s;
    let kappa = if rho == 2.0 { 2.0 } else { 1.0 };
    let mf = m as f64;

    let mut diag: f64 = (2..m)
        .map(|k| {
            let k = k as f64;
            ((k + 1.0).powf(chi) - (k - 1.0).powf(chi)) / k.powf(rho)
        })
        .sum();
    diag += ((mf + 1.0).powf(chi) - (mf - 1.0).powf(chi)) / mf.powf(rho);
    diag += 2f64.powf(chi) + kappa - 1.0;
    diag += chi / (s * mf.powf(2.0 * s));

    // Toeplitz column of the (-Δ)^s stencil, before scaling
    let mut col = vec![0.0; n];
    col[0] = diag;
    if n > 1 {
        col[1] = -0.5 * (2f64.powf(chi) + kappa - 1.0);
    }
    for (k, c) in col.iter_mut().enumerate().skip(2) {
        let kf = k as f64;
        *c = -((kf + 1.0).powf(chi) - (kf - 1.0).powf(chi)) / (2.0 * kf.powf(rho));
    }

    let c_norm = fractional_constant(alpha);
    let scale = c_norm / (chi * dx.powf(alpha));
    let matrix = DMatrix::from_fn(n, n, |i, j| -scale * col[i.abs_diff(j)]);
    Ok(FracOperator {
        alpha,
        m,
        dx,
        rho_scheme: rho,
        c_norm,
        discretization: Discretization::Fractional,
        matrix,
    })
}

/// Three-point Dirichlet Laplacian on the `m - 1` interior nodes of `[-1, 1]`.
pub fn classical_laplacian(m: usize) -> DMatrix<f64> {
    let n = m - 1;
    let dx = 2.0 / m as f64;
    let inv = 1.0 / (dx * dx);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => -2.0 * inv,
        1 => inv,
        _ => 0.0,
    })
}

impl FracOperator {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn n_interior(&self) -> usize {
        self.m - 1
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn rho_scheme(&self) -> f64 {
        self.rho_scheme
    }

    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    pub fn discretization(&self) -> Discretization {
        self.discretization
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Interior node coordinates `x_j = -1 + j Δx`, `j = 1..M-1`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..self.m).map(|j| -1.0 + j as f64 * self.dx).collect()
    }

    /// Row-major CSV dump of the matrix at full precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = (0..self.matrix.ncols())
                .map(|j| format!("{:?}", self.matrix[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Principal Dirichlet eigenpair `(λ₁, φ₁)` of `-A`, with `Σ φ₁ Δx = 1`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Values on the interior nodes; zero outside.
    pub phi1: Vec<f64>,
    pub dx: f64,
    /// `‖(-A)x - λ₁x‖₂` for the unit-norm iterate at termination.
    pub residual: f64,
    pub iterations: usize,
}

impl EigenPair {
    /// `M₁ = max φ₁`.
    pub fn max(&self) -> f64 {
        self.phi1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫_D φ₁^e`. Simpson over the zero-boundary grid for `e > 0`; for
    /// `e < 0` the integrand is singular at `±1`, so only the interior nodes
    /// `x_1..x_{M-1}` enter.
    pub fn power_integral(&self, exponent: f64) -> f64 {
        if exponent > 0.0 {
            quadrature::simpson_interior(&self.phi1, self.dx, |v| v.powf(exponent)).0
        } else {
            let vals: Vec<f64> = self.phi1.iter().map(|v| v.powf(exponent)).collect();
            quadrature::simpson(&vals, self.dx).0
        }
    }

    /// `∫_D f φ₁` by composite Simpson.
    pub fn project(&self, f: &[f64]) -> f64 {
        let prod: Vec<f64> = f.iter().zip(&self.phi1).map(|(a, b)| a * b).collect();
        quadrature::simpson_interior(&prod, self.dx, |v| v).0
    }
}

/// Inverse power iteration on `-A` from the all-ones vector.
pub fn principal_eigenpair(op: &FracOperator, eigen_tol: f64) -> Result<EigenPair> {
    principal_eigenpair_with_limit(op, eigen_tol, MAX_EIGEN_ITERATIONS)
}

pub fn principal_eigenpair_with_limit(
    op: &FracOperator,
    eigen_tol: f64,
    max_iterations: usize,
) -> Result<EigenPair> {
    if !(eigen_tol > 0.0) {
        return Err(Error::param("eigen_tol", "must be positive"));
    }
    let neg_a = -op.matrix.clone();
    let chol = neg_a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("-A is not positive definite".into()))?;
    let n = op.n_interior();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 1..=max_iterations {
        let mut y = chol.solve(&x);
        y /= y.norm();
        let ay = &neg_a * &y;
        lambda = y.dot(&ay);
        residual = (&ay - &y * lambda).norm();
        x = y;
        if residual <= eigen_tol * lambda {
            let sign = if x.sum() < 0.0 { -1.0 } else { 1.0 };
            if x.iter().any(|v| sign * v <= 0.0) {
                return Err(Error::SignIndefinite);
            }
            let mass: f64 = x.iter().map(|v| sign * v).sum::<f64>() * op.dx;
            let phi1 = x.iter().map(|v| sign * v / mass).collect();
            return Ok(EigenPair {
                lambda1: lambda,
                phi1,
                dx: op.dx,
                residual,
                iterations: it,
            });
        }
    }
    let _ = lambda;
    Err(Error::EigenNotConverged {
        iterations: max_iterations,
        residual,
    })
}

/// `t ↦ max_j (e^{t(A+γ)} 1)_j` sampled on `t_grid`, by implicit Euler
/// substeps no larger than `min(spacing, 1e-3)`.
pub fn semigroup_sup_norm_profile(op: &FracOperator, gamma: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    if t_grid.first().copied() != Some(0.0) {
        return Err(Error::param("t_grid", "must start at 0"));
    }
    if t_grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::param("t_grid", "must be sorted"));
    }
    let n = op.n_interior();
    let mut w = DVector::from_element(n, 1.0);
    let mut scratch = DVector::zeros(n);
    let mut steppers: HashMap<u64, ImplicitStep> = HashMap::new();
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(1.0);
    for pair in t_grid.windows(2) {
        let span = pair[1] - pair[0];
        if span > 0.0 {
            let substeps = (span / PROFILE_MAX_SUBSTEP - 1e-9).ceil().max(1.0) as usize;
            let h = span / substeps as f64;
            let step = match steppers.entry(h.to_bits()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(ImplicitStep::new(&op.matrix, h, gamma)?),
            };
            for _ in 0..substeps {
                step.apply(&w, &mut scratch);
                std::mem::swap(&mut w, &mut scratch);
            }
        }
        let max = w.max();
        if !(max >= 0.0) || w.iter().any(|v| *v < 0.0) {
            return Err(Error::Consistency(format!(
                "semigroup profile lost positivity at t = {}",
                pair[1]
            )));
        }
        out.push(max);
    }
    Ok(out)
}

/// One row of an eigenvalue sweep over `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    pub lambda1: Option<f64>,
    /// `λ₁^{(α)} ≤ (λ₁^{(2)})^{α/2}` against the classical FD eigenvalue.
    pub comparison_ok: Option<bool>,
    pub error: Option<String>,
}

/// Principal eigenvalue of the three-point Laplacian on `m` intervals.
pub fn classical_principal_eigenvalue(m: usize) -> f64 {
    let h = 2.0 / m as f64;
    let s = (std::f64::consts::PI * h / 4.0).sin();
    4.0 / (h * h) * s * s
}

pub fn eigenvalue_alpha_sweep(alphas: &[f64], m: usize) -> Vec<AlphaRow> {
    let classical = classical_principal_eigenvalue(m);
    alphas
        .iter()
        .map(|&alpha| {
            let res = build_fd_matrix(alpha, m, default_rho(alpha))
                .and_then(|op| principal_eigenpair(&op, DEFAULT_EIGEN_TOL));
            match res {
                Ok(eig) => AlphaRow {
                    alpha,
                    lambda1: Some(eig.lambda1),
                    comparison_ok: Some(eig.lambda1 <= classical.powf(0.5 * alpha)),
                    error: None,
                },
                Err(e) => AlphaRow {
                    alpha,
                    lambda1: None,
                    comparison_ok: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
