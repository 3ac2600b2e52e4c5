//! Dense helpers on top of nalgebra for the small SPD systems the oracles solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which an SPD system is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() <= tol * m.abs().max().max(1.0)
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).max()
}

/// Spectral norm (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Condition number of a symmetric matrix, `∞` when it is not positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `m x = b` for SPD `m` through a Cholesky factorization.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = spd_condition(m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(format!("{what}: condition number {cond:e}")));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what}: Cholesky factorization failed")))?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = spd_solve(m, &rhs, what)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}
