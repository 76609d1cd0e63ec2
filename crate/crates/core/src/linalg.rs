// SPDX-License-Identifier: MIT OR Apache-2.0

//! Symmetric positive-definite helpers on small row-major matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{DpdError, Result};

/// Largest accepted condition number before jitter is applied.
pub(crate) const MAX_CONDITION: f64 = 1e12;
/// Relative size of the one-off diagonal jitter.
pub(crate) const JITTER: f64 = 1e-10;

/// 2-norm condition number of a symmetric matrix; infinite when singular.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(min > 0.0) {
        return f64::INFINITY;
    }
    max / min
}

/// Inverse of an SPD matrix through its Cholesky factor.
///
/// A matrix whose condition number exceeds [`MAX_CONDITION`] gets
/// `JITTER * trace / d` added to the diagonal once; an error is returned if
/// that does not help. The second value is whether jitter was applied.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let d = m.nrows();
    let cond = condition_number(m);
    let (work, jittered) = if cond > MAX_CONDITION || !cond.is_finite() {
        let lambda = JITTER * m.trace() / d as f64;
        let mut j = m.clone();
        for i in 0..d {
            j[(i, i)] += lambda;
        }
        let c2 = condition_number(&j);
        if !(c2 <= MAX_CONDITION) {
            return Err(DpdError::SingularMatrix { condition: cond });
        }
        log::warn!("normalization matrix condition number {cond:.3e}; added diagonal jitter {lambda:.3e}");
        (j, true)
    } else {
        (m.clone(), false)
    };
    let chol = work.cholesky().ok_or(DpdError::SingularMatrix { condition: cond })?;
    Ok((chol.inverse(), jittered))
}
