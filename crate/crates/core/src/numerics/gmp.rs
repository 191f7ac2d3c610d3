//! Ridge system behind generalized max pooling: find the pooled vector whose
//! dot product with every embedded descriptor is as close to 1 as possible,
//!
//! ```text
//! xi = argmin |Phi^T xi - 1|^2 + gamma |xi|^2
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Above this many descriptors the dual Gram system is not formed.
pub const DUAL_LIMIT: usize = 512;
pub const CG_TOL: f64 = 1e-10;
pub const CG_MAX_ITERS: usize = 1000;

fn check(phi: &DMatrix<f64>, gamma: f64) -> Result<()> {
    if phi.ncols() == 0 {
        return Err(Error::EmptySetForGmp);
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be > 0, got {gamma}"
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Solves for the pooled vector with `phi` holding one embedding per column.
/// Uses the dual `Phi (Phi^T Phi + gamma I)^-1 1` when there are fewer
/// columns than rows (and fewer than [`DUAL_LIMIT`]), conjugate gradients on
/// the primal normal equations otherwise.
pub fn gmp_solve(phi: &DMatrix<f64>, gamma: f64) -> Result<DVector<f64>> {
    check(phi, gamma)?;
    if phi.ncols() < phi.nrows() && phi.ncols() < DUAL_LIMIT {
        gmp_solve_dual(phi, gamma)
    } else {
        gmp_solve_primal(phi, gamma)
    }
}

pub fn gmp_solve_dual(phi: &DMatrix<f64>, gamma: f64) -> Result<DVector<f64>> {
    check(phi, gamma)?;
    let n = phi.ncols();
    let mut gram = phi.transpose() * phi;
    for i in 0..n {
        gram[(i, i)] += gamma;
    }
    let chol = gram.cholesky().ok_or(Error::NonFiniteInput)?;
    let alpha = chol.solve(&DVector::from_element(n, 1.0));
    Ok(phi * alpha)
}

/// Conjugate gradients on `(Phi Phi^T + gamma I) xi = Phi 1`, never forming
/// the d x d matrix.
pub fn gmp_solve_primal(phi: &DMatrix<f64>, gamma: f64) -> Result<DVector<f64>> {
    check(phi, gamma)?;
    let apply = |v: &DVector<f64>| -> DVector<f64> { phi * (phi.tr_mul(v)) + v * gamma };
    let b = phi.column_sum();
    let b_norm = b.norm();
    let mut x = DVector::zeros(phi.nrows());
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..CG_MAX_ITERS {
        if rr.sqrt() <= CG_TOL * b_norm {
            break;
        }
        let ap = apply(&p);
        let step = rr / p.dot(&ap);
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_next = r.dot(&r);
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(x)
}
