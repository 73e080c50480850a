//! Dense helpers for the (small) interior-node systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Precomputed inverse of `I - h (A + shift I)`, applied as a dense mat-vec.
///
/// For the grid sizes used here (a few hundred nodes at most) one dense
/// mat-vec per step is as cheap as a pair of triangular solves and vectorises
/// better.
#[derive(Debug, Clone)]
pub struct ImplicitStep {
    inverse: DMatrix<f64>,
    h: f64,
}

impl ImplicitStep {
    pub fn new(a: &DMatrix<f64>, h: f64, shift: f64) -> Result<Self> {
        let n = a.nrows();
        let mut sys = DMatrix::<f64>::identity(n, n);
        sys -= a * h;
        for i in 0..n {
            sys[(i, i)] -= h * shift;
        }
        let inverse = sys
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::LinearSolve(format!("I - {h} A is singular")))?;
        Ok(Self { inverse, h })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn apply(&self, rhs: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.inverse, rhs, 0.0);
    }
}
