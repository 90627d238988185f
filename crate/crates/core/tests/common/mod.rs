//! Dense reference implementations used as oracles by the integration tests.
//! Nothing here calls into the library's solvers.
#![allow(dead_code)]

use bove::encoding::{PropertyEntry, RelationEntry, SentenceTensors, SparsePropertyMatrix, SparseRelationTensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn cell_value(indicator: bool, rng: &mut impl Rng) -> f64 {
    if indicator {
        1.0
    } else {
        rng.random_range(-1.0..1.0)
    }
}

/// Random sparse sentence tensors: each cell is stored with probability
/// `density`, with a value in `[-1, 1)` or exactly 1 when `indicator`.
pub fn random_tensors(
    c: usize,
    d: usize,
    n: usize,
    density: f64,
    indicator: bool,
    rng: &mut impl Rng,
) -> SentenceTensors {
    let mut w = Vec::new();
    for p in 0..c {
        for t in 0..n {
            if rng.random_bool(density) {
                w.push(PropertyEntry { predicate: p, token: t, value: cell_value(indicator, rng) });
            }
        }
    }
    let mut x = Vec::new();
    for k in 0..d {
        for h in 0..n {
            for dd in 0..n {
                if rng.random_bool(density) {
                    x.push(RelationEntry { relation: k, head: h, dependent: dd, value: cell_value(indicator, rng) });
                }
            }
        }
    }
    SentenceTensors::new(SparsePropertyMatrix::new(c, n, w).unwrap(), SparseRelationTensor::new(d, n, x).unwrap())
        .unwrap()
}

/// `Σ_s ‖W_s − P·E_sᵀ‖² + λ‖P‖²`.
pub fn p_block_objective(ws: &[DMatrix<f64>], es: &[DMatrix<f64>], p: &DMatrix<f64>, lambda: f64) -> f64 {
    let fit: f64 = ws.iter().zip(es).map(|(w, e)| (w - p * e.transpose()).norm_squared()).sum();
    fit + lambda * p.norm_squared()
}

/// `α·Σ_s Σ_k ‖X_sk − E_s·R_k·E_sᵀ‖² + λ‖R‖²`.
pub fn r_block_objective(
    xs: &[Vec<DMatrix<f64>>],
    es: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
    alpha: f64,
    lambda: f64,
) -> f64 {
    let mut fit = 0.0;
    for (x, e) in xs.iter().zip(es) {
        for (xk, rk) in x.iter().zip(r) {
            fit += (xk - e * rk * e.transpose()).norm_squared();
        }
    }
    alpha * fit + lambda * r.iter().map(|s| s.norm_squared()).sum::<f64>()
}

fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// Nesterov's accelerated gradient method for an `L`-smooth, `μ`-strongly
/// convex quadratic, run until the gradient vanishes to `tol` (relative to
/// the starting gradient) or `max_iters` is reached.
fn nesterov(
    x0: Vec<DMatrix<f64>>,
    grad: impl Fn(&[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
    mask: impl Fn(&mut [DMatrix<f64>]),
    l: f64,
    mu: f64,
    tol: f64,
    max_iters: usize,
) -> Vec<DMatrix<f64>> {
    let beta = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    let norm = |g: &[DMatrix<f64>]| g.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    let mut x = x0.clone();
    let mut y = x0;
    let g0 = {
        let mut g = grad(&x);
        mask(&mut g);
        norm(&g).max(1e-300)
    };
    for _ in 0..max_iters {
        let mut g = grad(&y);
        mask(&mut g);
        if norm(&g) <= tol * g0 {
            return y;
        }
        let next: Vec<DMatrix<f64>> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / l).collect();
        y = next.iter().zip(&x).map(|(n, o)| n + (n - o) * beta).collect();
        x = next;
    }
    y
}

/// Minimizes the `P` block objective by gradient descent, holding `frozen`
/// rows at their values in `p0`.
pub fn gd_oracle_p(
    ws: &[DMatrix<f64>],
    es: &[DMatrix<f64>],
    p0: &DMatrix<f64>,
    frozen: &[bool],
    lambda: f64,
) -> DMatrix<f64> {
    let rank = p0.ncols();
    let mut ete = DMatrix::zeros(rank, rank);
    for e in es {
        ete += e.transpose() * e;
    }
    let l = 2.0 * (largest_eigenvalue(&ete) + lambda);
    let mu = 2.0 * lambda;
    let grad = |x: &[DMatrix<f64>]| {
        let p = &x[0];
        let mut g = p * lambda * 2.0;
        for (w, e) in ws.iter().zip(es) {
            g += (p * e.transpose() - w) * e * 2.0;
        }
        vec![g]
    };
    let mask = |g: &mut [DMatrix<f64>]| {
        for (i, &f) in frozen.iter().enumerate() {
            if f {
                g[0].row_mut(i).fill(0.0);
            }
        }
    };
    nesterov(vec![p0.clone()], grad, mask, l, mu, 1e-14, 2_000_000).remove(0)
}

/// Minimizes the `R` block objective by gradient descent from zero.
pub fn gd_oracle_r(
    xs: &[Vec<DMatrix<f64>>],
    es: &[DMatrix<f64>],
    d: usize,
    rank: usize,
    alpha: f64,
    lambda: f64,
) -> Vec<DMatrix<f64>> {
    // ‖Σ_s G_s⊗G_s‖ ≤ Σ_s ‖G_s‖².
    let l = 2.0 * (alpha * es.iter().map(|e| largest_eigenvalue(&(e.transpose() * e)).powi(2)).sum::<f64>() + lambda);
    let mu = 2.0 * lambda;
    let grad = |r: &[DMatrix<f64>]| {
        r.iter()
            .enumerate()
            .map(|(k, rk)| {
                let mut g = rk * lambda * 2.0;
                for (x, e) in xs.iter().zip(es) {
                    let res = e * rk * e.transpose() - &x[k];
                    g += e.transpose() * res * e * (2.0 * alpha);
                }
                g
            })
            .collect()
    };
    nesterov(vec![DMatrix::zeros(rank, rank); d], grad, |_| {}, l, mu, 1e-14, 2_000_000)
}

/// Per-sentence objective `‖W − PEᵀ‖² + α‖X − ERE‖² + λ_E‖E‖²`, dense.
pub fn sentence_objective(
    t: &SentenceTensors,
    p: &DMatrix<f64>,
    r: &[DMatrix<f64>],
    e: &DMatrix<f64>,
    alpha: f64,
    lambda_e: f64,
) -> f64 {
    let w = t.w.to_dense();
    let mut fit = (w - p * e.transpose()).norm_squared();
    for (xk, rk) in t.x.to_dense().iter().zip(r) {
        fit += alpha * (xk - e * rk * e.transpose()).norm_squared();
    }
    fit + lambda_e * e.norm_squared()
}

pub fn relative_frobenius(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    let base: f64 = b.iter().map(|y| y.norm_squared()).sum();
    (diff / base.max(1e-300)).sqrt()
}

/// Minimizes `‖Y − E·F‖² + λ‖E‖²` over `E` by gradient descent from zero.
pub fn gd_oracle_ls(y: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let fft = f * f.transpose();
    let l = 2.0 * (largest_eigenvalue(&fft) + lambda);
    let mu = 2.0 * lambda;
    let grad = |x: &[DMatrix<f64>]| vec![(&x[0] * f - y) * f.transpose() * 2.0 + &x[0] * (2.0 * lambda)];
    nesterov(vec![DMatrix::zeros(y.nrows(), f.nrows())], grad, |_| {}, l, mu, 1e-14, 2_000_000).remove(0)
}
