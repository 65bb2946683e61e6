//! Factor analyses: the pluggable interface, the truncated SVD, an
//! equivariance diagnostic and parallel analysis for choosing the rank.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, RuvError};

/// Floor applied to estimated column variances.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Result of a rank-`q` factor analysis of an `n' x p'` matrix:
/// `y ~ zhat * alphahat` with column variances `sigmahat`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub zhat: DMatrix<f64>,
    pub alphahat: DMatrix<f64>,
    pub sigmahat: DVector<f64>,
}

impl FactorFit {
    pub fn q(&self) -> usize {
        self.zhat.ncols()
    }

    pub fn fitted(&self) -> DMatrix<f64> {
        &self.zhat * &self.alphahat
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize, q: usize) -> Result<()> {
        if self.zhat.shape() != (rows, q)
            || self.alphahat.shape() != (q, cols)
            || self.sigmahat.len() != cols
        {
            return Err(RuvError::shape(format!(
                "factor analysis returned Z {:?}, alpha {:?}, sigma {} for a {rows}x{cols} input at rank {q}",
                self.zhat.shape(),
                self.alphahat.shape(),
                self.sigmahat.len()
            )));
        }
        if self.sigmahat.iter().any(|s| !(*s > 0.0)) {
            return Err(RuvError::Numerical(
                "factor analysis returned a non-positive variance".into(),
            ));
        }
        Ok(())
    }
}

/// A rank-`q` factor analysis. Every estimator is generic over this trait,
/// so user-supplied factor analyses plug into all of them.
pub trait FactorAnalysis: Send + Sync {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit>;
}

impl<F: FactorAnalysis + ?Sized> FactorAnalysis for &F {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        (**self).fit(y, q)
    }
}

impl<F: FactorAnalysis + ?Sized> FactorAnalysis for Box<F> {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        (**self).fit(y, q)
    }
}

/// Configuration of the truncated SVD factor analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaConfig {
    /// Exponent splitting singular values between factors and loadings.
    /// Only `1.0` (all singular values on the loadings) is supported.
    pub svd_exponent: f64,
    pub variance_floor: f64,
}

impl Default for FaConfig {
    fn default() -> Self {
        Self {
            svd_exponent: 1.0,
            variance_floor: SIGMA_FLOOR,
        }
    }
}

/// Truncated SVD: `Z = U_q`, `alpha = D_q V_q'`,
/// `sigma_j = sum_{l > q} d_l^2 v_jl^2 / (n' - q)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruncatedSvd {
    pub config: FaConfig,
}

impl TruncatedSvd {
    pub fn new() -> Self {
        Self::default()
    }
}

impl FactorAnalysis for TruncatedSvd {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        truncated_svd_fa(y, q, &self.config)
    }
}

pub fn truncated_svd_fa(y: &DMatrix<f64>, q: usize, cfg: &FaConfig) -> Result<FactorFit> {
    if cfg.svd_exponent != 1.0 {
        return Err(RuvError::invalid(format!(
            "svd exponent {} is not supported; only 1 is implemented",
            cfg.svd_exponent
        )));
    }
    if !(cfg.variance_floor > 0.0) {
        return Err(RuvError::invalid("variance floor must be positive"));
    }
    let (rows, cols) = y.shape();
    if q == 0 || q > rows.min(cols) {
        return Err(RuvError::Rank {
            q,
            rows,
            cols,
            reason: "need 1 <= q <= min(rows, cols)".into(),
        });
    }
    let svd = y.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V'");
    let d = &svd.singular_values;
    let top = d[0];
    if !(d[q - 1] > 1e-10 * top) {
        return Err(RuvError::Rank {
            q,
            rows,
            cols,
            reason: format!(
                "singular value {} is {:e}, below 1e-10 of the largest ({top:e})",
                q,
                d[q - 1]
            ),
        });
    }

    let zhat = u.columns(0, q).into_owned();
    let mut alphahat = vt.rows(0, q).into_owned();
    for (l, mut row) in alphahat.row_iter_mut().enumerate() {
        row *= d[l];
    }

    // Residual column sums of squares from the discarded components.
    let mut rss = DVector::<f64>::zeros(cols);
    for l in q..d.len() {
        let dl2 = d[l] * d[l];
        for j in 0..cols {
            rss[j] += dl2 * vt[(l, j)] * vt[(l, j)];
        }
    }
    let dof = rows - q;
    let sigmahat = if dof == 0 {
        DVector::from_element(cols, cfg.variance_floor)
    } else {
        rss.map(|r| (r / dof as f64).max(cfg.variance_floor))
    };
    Ok(FactorFit {
        zhat,
        alphahat,
        sigmahat,
    })
}

/// Checks left orthogonal equivariance of `fa` at `(y, q_orth)`: the
/// column space of `Z(Q'y)` must equal that of `Q' Z(y)` and the variances
/// must agree, both within `1e-8`.
pub fn check_equivariance(
    fa: &dyn FactorAnalysis,
    y: &DMatrix<f64>,
    q_orth: &DMatrix<f64>,
    rank: usize,
) -> bool {
    let n = y.nrows();
    if q_orth.shape() != (n, n) {
        return false;
    }
    let rotated = q_orth.tr_mul(y);
    let (Ok(base), Ok(rot)) = (fa.fit(y, rank), fa.fit(&rotated, rank)) else {
        return false;
    };
    let target = q_orth.tr_mul(&base.zhat);
    let (Some(b1), Some(b2)) = (orthonormal_basis(&rot.zhat), orthonormal_basis(&target)) else {
        return false;
    };
    if b1.ncols() != b2.ncols() {
        return false;
    }
    // sin of the largest principal angle is bounded by this residual norm.
    let resid = &b2 - &b1 * b1.tr_mul(&b2);
    if resid.norm() > 1e-8 {
        return false;
    }
    base.sigmahat
        .iter()
        .zip(rot.sigmahat.iter())
        .all(|(a, b)| (a - b).abs() <= 1e-8 * a.abs().max(1.0))
}

fn orthonormal_basis(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let d = &svd.singular_values;
    let top = d.max();
    if !(top > 0.0) {
        return None;
    }
    let rank = d.iter().filter(|&&s| s > 1e-10 * top).count();
    let u = svd.u?;
    Some(u.columns(0, rank).into_owned())
}

/// Parallel analysis: counts leading singular values of the column-standardized
/// `y` that exceed the 95th percentile of those obtained after independently
/// permuting every column.
pub fn estimate_num_factors(y: &DMatrix<f64>, n_perms: usize, seed: u64) -> Result<usize> {
    if n_perms < 19 {
        return Err(RuvError::invalid(format!(
            "parallel analysis needs at least 19 permutations, got {n_perms}"
        )));
    }
    let (rows, cols) = y.shape();
    if rows < 2 || cols < 2 {
        return Err(RuvError::DegenerateInput(format!(
            "parallel analysis needs at least a 2x2 matrix, got {rows}x{cols}"
        )));
    }
    let std = standardize_columns(y)?;
    let observed = singular_values(&std);

    let null: Vec<DVector<f64>> = (0..n_perms)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let mut permuted = std.clone();
            let mut order: Vec<usize> = (0..rows).collect();
            for j in 0..cols {
                order.shuffle(&mut rng);
                let col = std.column(j);
                for (i, &src) in order.iter().enumerate() {
                    permuted[(i, j)] = col[src];
                }
            }
            singular_values(&permuted)
        })
        .collect();

    let mut count = 0;
    for l in 0..observed.len() {
        let mut vals: Vec<f64> = null.iter().map(|s| s[l]).collect();
        vals.sort_by(f64::total_cmp);
        if observed[l] > quantile_sorted(&vals, 0.95) {
            count += 1;
        } else {
            break;
        }
    }
    Ok(count)
}

fn standardize_columns(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows() as f64;
    let mut out = y.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1.0)).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(RuvError::DegenerateInput(format!("column {j} is constant")));
        }
        col /= sd;
    }
    Ok(out)
}

fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    // Eigenvalues of the smaller Gram matrix are cheaper than a full SVD.
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.tr_mul(m)
    };
    let mut ev: Vec<f64> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(ev)
}

/// Linear-interpolation quantile of sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Seed for the `index`-th independent stream derived from `base`
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rank_one_is_exact() {
        let u = gaussian(5, 1, 1);
        let v = gaussian(1, 7, 2);
        let y = &u * &v;
        let fit = TruncatedSvd::new().fit(&y, 1).unwrap();
        assert!((fit.fitted() - &y).norm() < 1e-10);
        assert!(fit.sigmahat.iter().all(|&s| s == SIGMA_FLOOR));
    }

    #[test]
    fn full_rank_square_reconstructs() {
        let y = gaussian(4, 4, 3);
        let fit = TruncatedSvd::new().fit(&y, 4).unwrap();
        assert!((fit.fitted() - &y).norm() < 1e-8);
    }

    #[test]
    fn sigma_matches_direct_residuals() {
        let y = gaussian(9, 6, 4);
        for q in 1..=4 {
            let fit = TruncatedSvd::new().fit(&y, q).unwrap();
            let resid = &y - fit.fitted();
            for j in 0..6 {
                let direct = resid.column(j).norm_squared() / (9 - q) as f64;
                assert!((direct - fit.sigmahat[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_errors() {
        let y = gaussian(4, 6, 5);
        assert!(matches!(
            TruncatedSvd::new().fit(&y, 5),
            Err(RuvError::Rank { .. })
        ));
        assert!(matches!(
            TruncatedSvd::new().fit(&y, 0),
            Err(RuvError::Rank { .. })
        ));
        let rank1 = &gaussian(4, 1, 6) * &gaussian(1, 6, 7);
        assert!(matches!(
            TruncatedSvd::new().fit(&rank1, 2),
            Err(RuvError::Rank { .. })
        ));
        let cfg = FaConfig {
            svd_exponent: 0.5,
            ..FaConfig::default()
        };
        assert!(truncated_svd_fa(&y, 1, &cfg).is_err());
    }

    #[test]
    fn identity_rotation_is_equivariant() {
        let y = gaussian(6, 4, 8);
        assert!(check_equivariance(
            &TruncatedSvd::new(),
            &y,
            &DMatrix::identity(6, 6),
            2
        ));
    }

    #[test]
    fn parallel_analysis_guards() {
        let y = gaussian(10, 20, 9);
        assert!(estimate_num_factors(&y, 10, 1).is_err());
        let mut c = y.clone();
        c.column_mut(3).fill(2.0);
        assert!(matches!(
            estimate_num_factors(&c, 19, 1),
            Err(RuvError::DegenerateInput(_))
        ));
    }

    #[test]
    fn parallel_analysis_is_deterministic() {
        let y = gaussian(20, 40, 10);
        let a = estimate_num_factors(&y, 19, 77).unwrap();
        let b = estimate_num_factors(&y, 19, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert!((quantile_sorted(&v, 0.95) - 3.8).abs() < 1e-12);
    }
}
