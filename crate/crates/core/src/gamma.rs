//! Regularized incomplete gamma functions, backed by `statrs`.

use statrs::function::gamma::{checked_gamma_lr, checked_gamma_ur};

use crate::error::{Error, Result};

fn check(a: f64, x: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::param("a", format!("shape must be positive and finite, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(Error::param("x", format!("argument must be nonnegative, got {x}")));
    }
    Ok(())
}

/// Lower regularized incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    checked_gamma_lr(a, x)
        .map(|v| v.clamp(0.0, 1.0))
        .map_err(|e| Error::param("a", e.to_string()))
}

/// Upper regularized incomplete gamma `Q(a, x) = 1 - P(a, x)`, evaluated directly.
pub fn regularized_gamma_q(a: f64, x: f64) -> Result<f64> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    checked_gamma_ur(a, x)
        .map(|v| v.clamp(0.0, 1.0))
        .map_err(|e| Error::param("a", e.to_string()))
}
