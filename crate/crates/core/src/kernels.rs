//! Small dense kernels shared by the update rules.
//!
//! Every kernel tallies the floating-point operations it performs into a
//! thread-local counter when debug assertions are enabled. Release builds
//! compile the tally away and [`op_count`] always reports zero there.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

#[inline(always)]
fn tally(_n: usize) {
    #[cfg(debug_assertions)]
    OPS.with(|c| c.set(c.get() + _n as u64));
}

/// Resets this thread's operation counter.
pub fn reset_op_count() {
    OPS.with(|c| c.set(0));
}

/// Floating-point operations counted on this thread since the last reset.
pub fn op_count() -> u64 {
    OPS.with(|c| c.get())
}

/// `true` when kernels are counting operations (debug builds).
pub const fn counting_enabled() -> bool {
    cfg!(debug_assertions)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    tally(2 * a.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    tally(2 * x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = mᵀ v` for a column-major `m` with `v.len() == m.nrows()`.
#[inline]
pub fn tr_mul_vec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    debug_assert_eq!(v.len(), rows);
    debug_assert_eq!(out.len(), m.ncols());
    let data = m.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&data[j * rows..(j + 1) * rows], v);
    }
}

/// `out = m v`
#[inline]
pub fn mul_vec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    debug_assert_eq!(v.len(), m.ncols());
    debug_assert_eq!(out.len(), rows);
    out.iter_mut().for_each(|o| *o = 0.0);
    let data = m.as_slice();
    for (j, vj) in v.iter().enumerate() {
        axpy(*vj, &data[j * rows..(j + 1) * rows], out);
    }
}

/// `m += alpha * u vᵀ`
#[inline]
pub fn rank1_update(m: &mut DMatrix<f64>, alpha: f64, u: &[f64], v: &[f64]) {
    let rows = m.nrows();
    debug_assert_eq!(u.len(), rows);
    debug_assert_eq!(v.len(), m.ncols());
    let data = m.as_mut_slice();
    for (j, vj) in v.iter().enumerate() {
        axpy(alpha * vj, u, &mut data[j * rows..(j + 1) * rows]);
    }
    tally(v.len());
}

pub fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
