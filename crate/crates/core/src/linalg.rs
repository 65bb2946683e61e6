//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Condition number above which a Gram matrix is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Full Householder QR of a tall matrix `x` (n x k, n > k).
///
/// Returns the n x n orthogonal `Q` and the k x k upper-triangular `R1`
/// with `x = Q [R1; 0]`. Signs are fixed so that `diag(R1) >= 0`.
pub fn householder_qr(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, k) = x.shape();
    let mut a = x.clone();
    let mut reflectors: Vec<(usize, DVector<f64>)> = Vec::with_capacity(k);

    for j in 0..k.min(n) {
        let col = a.view((j, j), (n - j, 1)).column(0).clone_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[0] >= 0.0 { -norm } else { norm };
        let mut v = col;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            continue;
        }
        v /= vnorm;
        // a[j.., j..] -= 2 v (v^T a[j.., j..])
        let mut block = a.view_mut((j, j), (n - j, k - j));
        let w = block.tr_mul(&v);
        block.ger(-2.0, &v, &w, 1.0);
        reflectors.push((j, v));
    }

    let mut q = DMatrix::<f64>::identity(n, n);
    for (j, v) in reflectors.iter().rev() {
        let mut block = q.view_mut((*j, 0), (n - j, n));
        let w = block.tr_mul(v);
        block.ger(-2.0, v, &w, 1.0);
    }

    let mut r = a.view((0, 0), (k, k)).upper_triangle();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Solves `gram * sol = rhs` for a symmetric positive-definite `gram`.
///
/// Fails with the observed condition number when `gram` is not positive
/// definite or its condition number exceeds `limit`.
pub fn spd_solve(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    limit: f64,
) -> std::result::Result<DMatrix<f64>, f64> {
    let cond = spd_condition(gram);
    if !(cond.is_finite() && cond <= limit) {
        return Err(cond);
    }
    match gram.clone().cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(f64::INFINITY),
    }
}

/// Spectral condition number of a symmetric matrix; infinite when it is not
/// positive definite.
pub fn spd_condition(gram: &DMatrix<f64>) -> f64 {
    if gram.nrows() == 0 {
        return 1.0;
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_columns(idx.iter())
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Writes the columns of `part` into `full` at positions `idx`.
pub fn scatter_columns(full: &mut DMatrix<f64>, part: &DMatrix<f64>, idx: &[usize]) {
    for (src, &dst) in idx.iter().enumerate() {
        full.set_column(dst, &part.column(src));
    }
}

pub fn column_sum_squares(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}

/// Least-squares coefficients of `y` on the columns of `z`: `(z'z)^{-1} z'y`.
pub fn regress(z: &DMatrix<f64>, y: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    spd_solve(&z.tr_mul(z), &z.tr_mul(y), CONDITION_LIMIT)
}

/// Returns `m * diag(d)`.
pub fn scale_columns(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}
