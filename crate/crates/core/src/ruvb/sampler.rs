//! Conjugate Gibbs sampler for the Bayesian factor model
//!
//! ```text
//! Y = L F + E,   E ~ N(0, Sigma (x) I),   Sigma^{-1} = diag(xi)
//! L | Psi ~ N(0, Psi (x) I),  Psi = diag(1 / zeta)
//! F | Sigma ~ N(0, Sigma (x) I_q)
//! xi_j | phi ~ Gamma(rho0 / 2, rho0 phi / 2)
//! phi ~ Gamma(alpha0 / 2, alpha0 beta0 / 2)
//! zeta_l ~ Gamma(eta0 / 2, eta0 tau0 / 2)
//! ```
//!
//! Gamma distributions are parameterised by shape and rate. A block of `Y`
//! may be missing; it is imputed from `N(L F, Sigma)` at the end of each sweep.
//!
//! Randomness tied to a single gene (its factor column, precision and
//! imputed entries) comes from that gene's own stream; everything else comes
//! from the chain-level stream.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Result, RuvError};

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfaHyper {
    pub rho0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub eta0: f64,
    pub tau0: f64,
}

impl Default for BfaHyper {
    fn default() -> Self {
        Self {
            rho0: 0.1,
            alpha0: 0.1,
            beta0: 1.0,
            eta0: 1.0,
            tau0: 1.0,
        }
    }
}

impl BfaHyper {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rho0, self.alpha0, self.beta0, self.eta0, self.tau0];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(RuvError::invalid(format!(
                "hyperparameters must be positive: {self:?}"
            )))
        }
    }
}

/// Current values of all sampled parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BfaState {
    /// `n' x q` loadings.
    pub l: DMatrix<f64>,
    /// `q x p'` factors.
    pub f: DMatrix<f64>,
    /// Gene precisions.
    pub xi: DVector<f64>,
    pub phi: f64,
    /// Loading precisions.
    pub zeta: DVector<f64>,
}

impl BfaState {
    pub fn is_valid(&self) -> bool {
        self.phi > 0.0
            && self.phi.is_finite()
            && self.xi.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.zeta.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.l.iter().all(|v| v.is_finite())
            && self.f.iter().all(|v| v.is_finite())
    }
}

/// The missing entries: the first `rows` rows of the given columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingBlock {
    pub rows: usize,
    pub cols: Vec<usize>,
}

fn gamma(shape: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, 1.0).map_err(|e| RuvError::Numerical(format!("gamma({shape}): {e}")))
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(RuvError::Numerical(format!("sampled {what} = {v}")))
    }
}

/// Lower Cholesky factor and its inverse.
fn chol_parts(a: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = a.nrows();
    let chol = a.cholesky().ok_or_else(|| {
        RuvError::Numerical("conditional precision is not positive definite".into())
    })?;
    let lower = chol.l();
    let inv = lower
        .solve_lower_triangular(&DMatrix::identity(q, q))
        .ok_or_else(|| RuvError::Numerical("singular Cholesky factor".into()))?;
    Ok((lower, inv))
}

fn standard_normals<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Step 1: rows of `L` from `N(A^{-1} F Sigma^{-1} y_i', A^{-1})` with
/// `A = F Sigma^{-1} F' + diag(zeta)`.
pub fn draw_loadings<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    f: &DMatrix<f64>,
    xi: &DVector<f64>,
    zeta: &DVector<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let q = f.nrows();
    let fw = crate::linalg::scale_columns(f, xi);
    let mut a = &fw * f.transpose();
    for l in 0..q {
        a[(l, l)] += zeta[l];
    }
    let (lower, lower_inv) = chol_parts(a)?;
    // mean' = A^{-1} F Sigma^{-1} Y'
    let rhs = &fw * y.transpose();
    let mean_t = lower
        .solve_lower_triangular(&rhs)
        .and_then(|v| lower.transpose().solve_upper_triangular(&v))
        .ok_or_else(|| RuvError::Numerical("loading solve failed".into()))?;
    // z L^{-1} has rows with covariance (L L')^{-1}.
    let noise = standard_normals(y.nrows(), q, rng) * lower_inv;
    Ok(mean_t.transpose() + noise)
}

/// Step 2: columns of `F` from `N(B^{-1} L' y_j, B^{-1} / xi_j)` with
/// `B = L'L + I`.
pub fn draw_factors<R: Rng>(
    y: &DMatrix<f64>,
    l: &DMatrix<f64>,
    xi: &DVector<f64>,
    gene_rngs: &mut [R],
) -> Result<DMatrix<f64>> {
    let q = l.ncols();
    let b = l.tr_mul(l) + DMatrix::<f64>::identity(q, q);
    let (lower, lower_inv) = chol_parts(b)?;
    let mean = lower
        .solve_lower_triangular(&l.tr_mul(y))
        .and_then(|v| lower.transpose().solve_upper_triangular(&v))
        .ok_or_else(|| RuvError::Numerical("factor solve failed".into()))?;
    let upper_inv = lower_inv.transpose();
    let mut out = mean;
    let mut z = DVector::<f64>::zeros(q);
    for (j, rng) in gene_rngs.iter_mut().enumerate() {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let scale = 1.0 / xi[j].sqrt();
        let noise = &upper_inv * &z * scale;
        out.column_mut(j).axpy(1.0, &noise, 1.0);
    }
    Ok(out)
}

/// Step 3: `xi_j ~ Gamma((n' + q + rho0)/2, (r_j + u_j + rho0 phi)/2)` with
/// residual and factor column sums of squares `r_j`, `u_j`.
pub fn draw_precisions<R: Rng>(
    y: &DMatrix<f64>,
    l: &DMatrix<f64>,
    f: &DMatrix<f64>,
    phi: f64,
    hyper: &BfaHyper,
    gene_rngs: &mut [R],
) -> Result<DVector<f64>> {
    let (n, q) = l.shape();
    let resid = y - l * f;
    let g = gamma((n as f64 + q as f64 + hyper.rho0) / 2.0)?;
    let mut out = DVector::zeros(y.ncols());
    for (j, rng) in gene_rngs.iter_mut().enumerate() {
        let rate =
            (resid.column(j).norm_squared() + f.column(j).norm_squared() + hyper.rho0 * phi) / 2.0;
        out[j] = positive(g.sample(rng) / rate, "gene precision")?;
    }
    Ok(out)
}

/// Step 4: `phi ~ Gamma((p rho0 + alpha0)/2, (alpha0 beta0 + rho0 sum xi)/2)`.
pub fn draw_phi<R: Rng + ?Sized>(xi: &DVector<f64>, hyper: &BfaHyper, rng: &mut R) -> Result<f64> {
    let p = xi.len() as f64;
    let g = gamma((p * hyper.rho0 + hyper.alpha0) / 2.0)?;
    let rate = (hyper.alpha0 * hyper.beta0 + hyper.rho0 * xi.sum()) / 2.0;
    positive(g.sample(rng) / rate, "phi")
}

/// Step 5: `zeta_l ~ Gamma((n' + eta0)/2, (s_l + eta0 tau0)/2)` with
/// `s = diag(L'L)`.
pub fn draw_zeta<R: Rng + ?Sized>(
    l: &DMatrix<f64>,
    hyper: &BfaHyper,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = l.nrows() as f64;
    let g = gamma((n + hyper.eta0) / 2.0)?;
    let mut out = DVector::zeros(l.ncols());
    for (k, col) in l.column_iter().enumerate() {
        let rate = (col.norm_squared() + hyper.eta0 * hyper.tau0) / 2.0;
        out[k] = positive(g.sample(rng) / rate, "loading precision")?;
    }
    Ok(out)
}

/// Replaces the missing block by a draw from `N((L F)_ij, 1 / xi_j)`.
pub fn impute<R: Rng>(
    y: &mut DMatrix<f64>,
    l: &DMatrix<f64>,
    f: &DMatrix<f64>,
    xi: &DVector<f64>,
    block: &MissingBlock,
    gene_rngs: &mut [R],
) {
    let top = l.rows(0, block.rows);
    for &j in &block.cols {
        let rng = &mut gene_rngs[j];
        let sd = 1.0 / xi[j].sqrt();
        for i in 0..block.rows {
            let z: f64 = StandardNormal.sample(rng);
            y[(i, j)] = top.row(i).dot(&f.column(j).transpose()) + sd * z;
        }
    }
}

/// One full sweep: the five conditional draws followed by imputation.
pub fn gibbs_step<R: Rng>(
    state: &mut BfaState,
    y: &mut DMatrix<f64>,
    block: &MissingBlock,
    hyper: &BfaHyper,
    rng: &mut R,
    gene_rngs: &mut [R],
) -> Result<()> {
    if gene_rngs.len() != y.ncols() {
        return Err(RuvError::shape("one random stream per gene is required"));
    }
    state.l = draw_loadings(y, &state.f, &state.xi, &state.zeta, rng)?;
    state.f = draw_factors(y, &state.l, &state.xi, gene_rngs)?;
    state.xi = draw_precisions(y, &state.l, &state.f, state.phi, hyper, gene_rngs)?;
    state.phi = draw_phi(&state.xi, hyper, rng)?;
    state.zeta = draw_zeta(&state.l, hyper, rng)?;
    impute(y, &state.l, &state.f, &state.xi, block, gene_rngs);
    Ok(())
}
