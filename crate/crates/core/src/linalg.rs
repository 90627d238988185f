//! Small dense linear-algebra helpers shared by the trainers.
//!
//! Vectorization is row-major throughout: `vec_row(B)` stacks the rows of `B`
//! left to right, so entry `(k, l)` of an `r×r` matrix lands at `k*r + l`.
//! Under this convention `vec_row(A·B·Cᵀ) = (A⊗C)·vec_row(B)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{BoveError, Result};

/// Kronecker product `A⊗B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Row-major vectorization of a matrix.
pub fn vec_row(m: &DMatrix<f64>) -> DVector<f64> {
    let (rows, cols) = m.shape();
    DVector::from_fn(rows * cols, |i, _| m[(i / cols, i % cols)])
}

/// Inverse of [`vec_row`].
pub fn unvec_row(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols);
    DMatrix::from_row_slice(rows, cols, v)
}

/// Adds `lambda` to the diagonal in place.
pub fn add_ridge(m: &mut DMatrix<f64>, lambda: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += lambda;
    }
}

/// Solves `X·A = B` for `X` with `A` symmetric positive definite.
///
/// A failed Cholesky factorization is reported as [`BoveError::Singular`];
/// no pseudo-inverse fallback is attempted.
pub fn solve_right_spd(a: DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(BoveError::Singular { what });
    }
    let chol = Cholesky::new(a).ok_or(BoveError::Singular { what })?;
    Ok(chol.solve(&b.transpose()).transpose())
}

/// `EᵀE` with each entry summed in sorted order, so the result is bit-identical
/// under any permutation of the rows of `E`.
pub fn gram_row_order_invariant(e: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = e.shape();
    let mut g = DMatrix::zeros(r, r);
    let mut terms = Vec::with_capacity(n);
    for a in 0..r {
        for b in a..r {
            terms.clear();
            terms.extend((0..n).map(|i| e[(i, a)] * e[(i, b)]));
            terms.sort_by(f64::total_cmp);
            let sum: f64 = terms.iter().sum();
            g[(a, b)] = sum;
            g[(b, a)] = sum;
        }
    }
    g
}

/// Sum of squared entries.
pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Scalar soft-thresholding `sign(x)·max(|x| − tau, 0)`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
