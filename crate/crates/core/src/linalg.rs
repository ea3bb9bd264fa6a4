//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Lower Cholesky factor of an SPD matrix, or `None` when the matrix is not
/// numerically positive definite.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(a.clone()).map(|c| c.l())
}

/// Cholesky with diagonal jitter escalated by ×10 from `start` to `max`
/// (both relative to the mean diagonal). Returns the factor and the absolute
/// jitter that was added.
pub fn cholesky_jittered(a: &DMatrix<f64>, start: f64, max: f64) -> Result<(DMatrix<f64>, f64)> {
    if let Some(l) = cholesky_lower(a) {
        return Ok((l, 0.0));
    }
    let n = a.nrows();
    let scale = (a.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = start;
    while rel <= max * (1.0 + 1e-12) {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += rel * scale;
        }
        if let Some(l) = cholesky_lower(&b) {
            return Ok((l, rel * scale));
        }
        rel *= 10.0;
    }
    Err(Error::Numerical(format!(
        "matrix of order {n} not positive definite after jitter {max:e}"
    )))
}

/// Lower-triangular factor `L` with `L Lᵀ = A` for a positive *semi*-definite
/// matrix. Pivots below `1e-12·max_diag` produce zero columns, so rank
/// deficiency (coincident points, zero variance) is represented exactly.
/// Pivots more negative than `-1e-8·max_diag` trigger jitter escalation.
pub fn psd_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut jitter = 0.0;
    for _ in 0..8 {
        if let Some(l) = semidefinite_cholesky(a, jitter, max_diag) {
            return Ok(l);
        }
        jitter = if jitter == 0.0 { 1e-10 * max_diag } else { jitter * 10.0 };
    }
    Err(Error::Numerical(format!(
        "covariance of order {n} is not positive semi-definite"
    )))
}

fn semidefinite_cholesky(a: &DMatrix<f64>, jitter: f64, max_diag: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let zero_tol = 1e-12 * max_diag;
    let neg_tol = -1e-8 * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < neg_tol {
            return None;
        }
        if d <= zero_tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a zero pivot")
}

pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a zero pivot")
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor has a zero pivot")
}

/// Solves `(L Lᵀ) x = b`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

pub fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(a.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= 1e-10 * a.amax().max(1.0) && cholesky_lower(a).is_some()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `mean + L ε`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + factor * standard_normal_vector(mean.len(), rng)
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}
