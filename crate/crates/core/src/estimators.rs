//! RUV2 (original and rotated), RUV3 and RUV4/CATE estimators, and the two
//! constrained factor analyses under which RUV2 and RUV4 reduce to RUV3.
//!
//! Standard errors treat the estimated factors as fixed. For a gene with
//! variance `s2_j`, `Var(beta2_j) = s2_j R22^{-1} (I + Z2 (Z3'Z3)^{-1} Z2') R22^{-T}`,
//! where the middle term accounts for the regression estimate of `alpha_j`.
//! Every estimator reports `n - k - q` degrees of freedom.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::calibration;
use crate::error::{Result, RuvError};
use crate::factor::{FactorAnalysis, FactorFit};
use crate::linalg::{self, CONDITION_LIMIT};
use crate::model::{self, Design, EffectResult, ResponseMatrix, RotatedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuvVariant {
    Ruv2Old,
    Ruv2,
    Ruv3,
    Ruv4Ols,
    Cate,
}

impl fmt::Display for RuvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuvVariant::Ruv2Old => "RUV2OLD",
            RuvVariant::Ruv2 => "RUV2",
            RuvVariant::Ruv3 => "RUV3",
            RuvVariant::Ruv4Ols => "RUV4OLS",
            RuvVariant::Cate => "CATE",
        })
    }
}

/// How RUV4 estimates `Z2` from the control columns of `Y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ruv4Mode {
    Ols,
    Gls,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Moderate the factor-analysis variances by EBVM before they enter the
    /// GLS step and the standard errors.
    pub moderate_before_gls: bool,
}

#[derive(Debug, Clone)]
pub struct RuvFit {
    /// Effects for the non-control genes.
    pub effect: EffectResult,
    /// The same quantities for the control genes (input to calibration).
    pub control_effect: EffectResult,
    pub z2hat: DMatrix<f64>,
    /// `q x p` loadings over all genes.
    pub alphahat: DMatrix<f64>,
    /// Per-gene variances over all genes.
    pub sigmahat: DVector<f64>,
    pub q: usize,
    pub variant: RuvVariant,
    /// Residual degrees of freedom `n - k - q`.
    pub dof: f64,
}

impl RuvFit {
    pub fn alphahat_controls(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.alphahat, self.effect_controls())
    }

    pub fn sigmahat_controls(&self) -> DVector<f64> {
        linalg::select_entries(&self.sigmahat, self.effect_controls())
    }

    fn effect_controls(&self) -> &[usize] {
        &self.control_effect.columns
    }
}

fn check_counts(rm: &RotatedModel, q: usize) -> Result<usize> {
    let m = rm.controls().m();
    if q == 0 {
        return Err(RuvError::invalid("number of factors must be at least 1"));
    }
    if m <= q {
        log::warn!("only {m} control genes for {q} factors");
        return Err(RuvError::TooFewControls { m, q });
    }
    let resid = rm.residual_rows();
    if resid <= q {
        return Err(RuvError::ZeroDof {
            context: format!("n - k - q = {} - {q}", resid),
        });
    }
    Ok(resid - q)
}

/// `Z2 = Y2C aC' (aC aC')^{-1}`.
pub fn ols_z2(y2c: &DMatrix<f64>, alpha_c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sol = linalg::spd_solve(
        &(alpha_c * alpha_c.transpose()),
        &(alpha_c * y2c.transpose()),
        CONDITION_LIMIT,
    )
    .map_err(|condition| RuvError::SingularControl { condition })?;
    Ok(sol.transpose())
}

/// `Z2 = Y2C S^{-1} aC' (aC S^{-1} aC')^{-1}` with `S = diag(sigma_c)`.
pub fn gls_z2(
    y2c: &DMatrix<f64>,
    alpha_c: &DMatrix<f64>,
    sigma_c: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if sigma_c.iter().any(|s| !(*s > 0.0)) {
        return Err(RuvError::invalid("control variances must be positive"));
    }
    let weighted = linalg::scale_columns(alpha_c, &sigma_c.map(|s| 1.0 / s));
    let sol = linalg::spd_solve(
        &(&weighted * alpha_c.transpose()),
        &(&weighted * y2c.transpose()),
        CONDITION_LIMIT,
    )
    .map_err(|condition| RuvError::SingularControl { condition })?;
    Ok(sol.transpose())
}

fn z3_gram_inverse(z3: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = z3.ncols();
    linalg::spd_solve(&z3.tr_mul(z3), &DMatrix::identity(q, q), CONDITION_LIMIT)
        .map_err(|condition| RuvError::Collinearity { condition })
}

fn moderate(sigma: &DVector<f64>, dof: f64) -> Result<(DVector<f64>, f64)> {
    let dofs = vec![dof; sigma.len()];
    let out = calibration::ebvm(sigma.as_slice(), &dofs)?;
    let extra = out.prior.map_or(0.0, |p| p.d0);
    Ok((DVector::from_vec(out.variances), dof + extra))
}

/// Builds non-control and control effects from `(Z2, alpha, Sigma)` over all
/// genes and the factors `Z3` of the residual block.
fn finish(
    rm: &RotatedModel,
    z2hat: DMatrix<f64>,
    z3hat: &DMatrix<f64>,
    alphahat: DMatrix<f64>,
    sigmahat: DVector<f64>,
    dof: f64,
    variant: RuvVariant,
    tag: &str,
) -> Result<RuvFit> {
    let ginv = z3_gram_inverse(z3hat)?;
    let extra = &z2hat * ginv * z2hat.transpose();
    let mult = rm.coefficient_multipliers(Some(&extra));
    let correction = &z2hat * &alphahat;
    let cs = rm.controls();
    let effect = model::assemble_effects(
        rm,
        cs.non_controls(),
        Some(&correction),
        &sigmahat,
        &mult,
        dof,
        tag,
    )?;
    let control_effect = model::assemble_effects(
        rm,
        cs.controls(),
        Some(&correction),
        &sigmahat,
        &mult,
        dof,
        tag,
    )?;
    Ok(RuvFit {
        effect,
        control_effect,
        q: z2hat.ncols(),
        z2hat,
        alphahat,
        sigmahat,
        variant,
        dof,
    })
}

/// RUV4: factor analysis of `Y3`, then `Z2` from the control columns of `Y2`
/// by OLS or GLS (the latter is CATE).
pub fn ruv4<F: FactorAnalysis + ?Sized>(
    rm: &RotatedModel,
    fa: &F,
    q: usize,
    mode: Ruv4Mode,
) -> Result<RuvFit> {
    ruv4_with(rm, fa, q, mode, FitOptions::default())
}

pub fn ruv4_with<F: FactorAnalysis + ?Sized>(
    rm: &RotatedModel,
    fa: &F,
    q: usize,
    mode: Ruv4Mode,
    opts: FitOptions,
) -> Result<RuvFit> {
    let dof = check_counts(rm, q)?;
    let fit = fa.fit(&rm.y3, q)?;
    fit.check_shape(rm.residual_rows(), rm.p(), q)?;
    let FactorFit {
        zhat: z3hat,
        alphahat,
        sigmahat,
    } = fit;
    let (sigmahat, dof) = if opts.moderate_before_gls {
        moderate(&sigmahat, dof as f64)?
    } else {
        (sigmahat, dof as f64)
    };
    let ctl = rm.controls().controls();
    let alpha_c = linalg::select_columns(&alphahat, ctl);
    let y2c = rm.y2_controls();
    let (z2hat, variant, tag) = match mode {
        Ruv4Mode::Ols => (ols_z2(&y2c, &alpha_c)?, RuvVariant::Ruv4Ols, "ruv4"),
        Ruv4Mode::Gls => {
            let sigma_c = linalg::select_entries(&sigmahat, ctl);
            (gls_z2(&y2c, &alpha_c, &sigma_c)?, RuvVariant::Cate, "cate")
        }
    };
    finish(rm, z2hat, &z3hat, alphahat, sigmahat, dof, variant, tag)
}

/// Regression of every column of `y3` on `z3`, with residual variances on
/// `dof` degrees of freedom.
fn regress_on_factors(
    z3: &DMatrix<f64>,
    y3: &DMatrix<f64>,
    dof: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let alpha =
        linalg::regress(z3, y3).map_err(|condition| RuvError::Collinearity { condition })?;
    let resid = y3 - z3 * &alpha;
    let sigma = linalg::column_sum_squares(&resid) / dof as f64;
    Ok((alpha, sigma))
}

/// RUV2 in the rotated framework: factor analysis of `[Y2C; Y3C]`, loadings
/// and variances by regressing `Y3` on the `Z3` block.
pub fn ruv2<F: FactorAnalysis + ?Sized>(rm: &RotatedModel, fa: &F, q: usize) -> Result<RuvFit> {
    let dof = check_counts(rm, q)?;
    let (k2, rows) = (rm.k2(), rm.residual_rows());
    let stacked = linalg::select_columns(&rm.y23(), rm.controls().controls());
    let fit = fa.fit(&stacked, q)?;
    fit.check_shape(k2 + rows, rm.controls().m(), q)?;
    let z2hat = fit.zhat.rows(0, k2).into_owned();
    let z3hat = fit.zhat.rows(k2, rows).into_owned();
    let (alphahat, sigmahat) = regress_on_factors(&z3hat, &rm.y3, dof)?;
    finish(
        rm,
        z2hat,
        &z3hat,
        alphahat,
        sigmahat,
        dof as f64,
        RuvVariant::Ruv2,
        "ruv2",
    )
}

/// RUV3: factor analysis of `Y3C` only, `Z2` by GLS on the controls and
/// non-control loadings by regression on `Z3`.
pub fn ruv3<F: FactorAnalysis + ?Sized>(rm: &RotatedModel, fa: &F, q: usize) -> Result<RuvFit> {
    ruv3_with(rm, fa, q, FitOptions::default())
}

pub fn ruv3_with<F: FactorAnalysis + ?Sized>(
    rm: &RotatedModel,
    fa: &F,
    q: usize,
    opts: FitOptions,
) -> Result<RuvFit> {
    let dof = check_counts(rm, q)?;
    let cs = rm.controls();
    let y3c = rm.y3_controls();
    let fit = fa.fit(&y3c, q)?;
    fit.check_shape(rm.residual_rows(), cs.m(), q)?;
    let (alpha_nc, sigma_nc) = regress_on_factors(&fit.zhat, &rm.y3_non_controls(), dof)?;

    let mut alphahat = DMatrix::zeros(q, rm.p());
    linalg::scatter_columns(&mut alphahat, &fit.alphahat, cs.controls());
    linalg::scatter_columns(&mut alphahat, &alpha_nc, cs.non_controls());
    let mut sigmahat = DVector::zeros(rm.p());
    for (i, &j) in cs.controls().iter().enumerate() {
        sigmahat[j] = fit.sigmahat[i];
    }
    for (i, &j) in cs.non_controls().iter().enumerate() {
        sigmahat[j] = sigma_nc[i];
    }
    let (sigmahat, dof) = if opts.moderate_before_gls {
        moderate(&sigmahat, dof as f64)?
    } else {
        (sigmahat, dof as f64)
    };
    let sigma_c = linalg::select_entries(&sigmahat, cs.controls());
    let z2hat = gls_z2(&rm.y2_controls(), &fit.alphahat, &sigma_c)?;
    finish(
        rm,
        z2hat,
        &fit.zhat,
        alphahat,
        sigmahat,
        dof,
        RuvVariant::Ruv3,
        "ruv3",
    )
}

/// The original RUV2: factor analysis of the control columns of `Y` (after
/// projecting out the nuisance covariates), then partial regression of `Y`
/// on the covariates of interest given the estimated factors.
pub fn ruv2_old<F: FactorAnalysis + ?Sized>(
    y: &ResponseMatrix,
    d: &Design,
    fa: &F,
    q: usize,
) -> Result<RuvFit> {
    let rm = model::rotate(y, d)?;
    let dof = check_counts(&rm, q)?;
    let (n, k1) = (y.n(), d.k1());
    let x2 = d.x().columns(k1, d.k2()).into_owned();

    // Basis of the orthogonal complement of the nuisance covariates, from a
    // QR of X1 alone.
    let (yt, xt, basis) = if k1 == 0 {
        (y.values().clone(), x2, None)
    } else {
        let x1 = d.x().columns(0, k1).into_owned();
        let (qfull, _) = linalg::householder_qr(&x1);
        let b = qfull.columns(k1, n - k1).into_owned();
        (b.tr_mul(y.values()), b.tr_mul(&x2), Some(b))
    };

    let ctl = rm.controls().controls();
    let fit = fa.fit(&linalg::select_columns(&yt, ctl), q)?;
    fit.check_shape(yt.nrows(), ctl.len(), q)?;
    let z = &fit.zhat;

    let zgram_inv = linalg::spd_solve(&z.tr_mul(z), &DMatrix::identity(q, q), CONDITION_LIMIT)
        .map_err(|condition| RuvError::Collinearity { condition })?;
    // S = I - Z (Z'Z)^{-1} Z'
    let proj = |m: &DMatrix<f64>| -> DMatrix<f64> { m - z * (&zgram_inv * z.tr_mul(m)) };
    let sx = proj(&xt);
    let sy = proj(&yt);
    let xsx = xt.tr_mul(&sx);
    let k2 = d.k2();
    let xsx_inv = linalg::spd_solve(&xsx, &DMatrix::identity(k2, k2), CONDITION_LIMIT)
        .map_err(|condition| RuvError::Collinearity { condition })?;
    let beta = &xsx_inv * sx.tr_mul(&yt);
    let resid = &sy - &sx * &beta;
    let sigmahat = linalg::column_sum_squares(&resid) / dof as f64;
    let alphahat = &zgram_inv * z.tr_mul(&(&yt - &xt * &beta));

    let mult = xsx_inv.diagonal();
    let build = |cols: &[usize]| -> Result<EffectResult> {
        let mut floored = false;
        let se = DMatrix::from_fn(k2, cols.len(), |i, j| {
            let mut s2 = sigmahat[cols[j]];
            if !(s2 >= model::VARIANCE_FLOOR) {
                s2 = model::VARIANCE_FLOOR;
                floored = true;
            }
            (s2 * mult[i]).sqrt()
        });
        let mut e = EffectResult::new(
            cols.to_vec(),
            linalg::select_columns(&beta, cols),
            se,
            DVector::from_element(cols.len(), dof as f64),
            "ruv2old",
        )?;
        e.se_floored |= floored;
        Ok(e)
    };
    let effect = build(rm.controls().non_controls())?;
    let control_effect = build(ctl)?;

    // Express the factors in the rotated frame to report Z2.
    let q23 = rm.q.columns(k1, n - k1).into_owned();
    let to_model = match &basis {
        Some(b) => q23.tr_mul(b),
        None => q23.transpose(),
    };
    let z2hat = (to_model * z).rows(0, k2).into_owned();

    Ok(RuvFit {
        effect,
        control_effect,
        z2hat,
        alphahat,
        sigmahat,
        q,
        variant: RuvVariant::Ruv2Old,
        dof: dof as f64,
    })
}

/// Factor analysis of `Y3` that only looks at the control columns: the base
/// analysis is fit to `Y3C`, non-control loadings come from regressing `Y3`
/// on the resulting factors and their variances from the residuals on
/// `n' - q` degrees of freedom. RUV4 (GLS) with this analysis is RUV3.
pub struct ConstrainedRuv4Fa<F> {
    pub base: F,
    pub controls: Vec<usize>,
}

impl<F: FactorAnalysis> FactorAnalysis for ConstrainedRuv4Fa<F> {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        let (rows, cols) = y.shape();
        let cs = model::ControlSet::new(&self.controls, cols)?;
        let base = self
            .base
            .fit(&linalg::select_columns(y, cs.controls()), q)?;
        base.check_shape(rows, cs.m(), q)?;
        if rows <= q {
            return Err(RuvError::ZeroDof {
                context: "constrained factor analysis needs n' > q".into(),
            });
        }
        let (alpha_nc, sigma_nc) = regress_on_factors(
            &base.zhat,
            &linalg::select_columns(y, cs.non_controls()),
            rows - q,
        )?;
        let mut alphahat = DMatrix::zeros(q, cols);
        linalg::scatter_columns(&mut alphahat, &base.alphahat, cs.controls());
        linalg::scatter_columns(&mut alphahat, &alpha_nc, cs.non_controls());
        let mut sigmahat = DVector::zeros(cols);
        for (i, &j) in cs.controls().iter().enumerate() {
            sigmahat[j] = base.sigmahat[i];
        }
        for (i, &j) in cs.non_controls().iter().enumerate() {
            sigmahat[j] = sigma_nc[i].max(crate::factor::SIGMA_FLOOR);
        }
        Ok(FactorFit {
            zhat: base.zhat,
            alphahat,
            sigmahat,
        })
    }
}

/// Factor analysis of the stacked `[Y2C; Y3C]` that fits the base analysis
/// to the last rows only and fills the first `k2` rows of the factors by GLS
/// against the base loadings. RUV2 with this analysis is RUV3.
pub struct ConstrainedRuv2Fa<F> {
    pub base: F,
    pub k2: usize,
}

impl<F: FactorAnalysis> FactorAnalysis for ConstrainedRuv2Fa<F> {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        let (rows, cols) = y.shape();
        if rows <= self.k2 {
            return Err(RuvError::shape(format!(
                "stacked input has {rows} rows, need more than k2 = {}",
                self.k2
            )));
        }
        let lower = y.rows(self.k2, rows - self.k2).into_owned();
        let base = self.base.fit(&lower, q)?;
        base.check_shape(rows - self.k2, cols, q)?;
        let z2 = gls_z2(
            &y.rows(0, self.k2).into_owned(),
            &base.alphahat,
            &base.sigmahat,
        )?;
        let mut zhat = DMatrix::zeros(rows, q);
        zhat.rows_mut(0, self.k2).copy_from(&z2);
        zhat.rows_mut(self.k2, rows - self.k2).copy_from(&base.zhat);
        Ok(FactorFit {
            zhat,
            alphahat: base.alphahat,
            sigmahat: base.sigmahat,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::TruncatedSvd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    /// Y = X beta + Z alpha + noise * E with beta = 0 on the controls.
    fn planted(
        n: usize,
        p: usize,
        m: usize,
        q: usize,
        k1: usize,
        noise: f64,
        seed: u64,
    ) -> (ResponseMatrix, Design, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k1 + 1;
        let x = gaussian(n, k, &mut rng);
        let mut beta = gaussian(k, p, &mut rng);
        for j in 0..m {
            beta[(k - 1, j)] = 0.0;
        }
        let z = gaussian(n, q, &mut rng);
        let alpha = gaussian(q, p, &mut rng) * 3.0;
        let y = &x * &beta + z * alpha + gaussian(n, p, &mut rng) * noise;
        let d = Design::new(x, k1, (0..m).collect()).unwrap();
        (ResponseMatrix::new(y).unwrap(), d, beta)
    }

    #[test]
    fn noiseless_z2_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gaussian(1, 2, &mut rng);
        let a = gaussian(2, 8, &mut rng);
        let y2c = &z * &a;
        assert!((ols_z2(&y2c, &a).unwrap() - &z).norm() < 1e-10);
        let ones = DVector::from_element(8, 1.0);
        assert!((gls_z2(&y2c, &a, &ones).unwrap() - &z).norm() < 1e-10);
    }

    #[test]
    fn planted_recovery_without_noise() {
        let (y, d, beta) = planted(12, 20, 8, 2, 1, 0.0, 2);
        let rm = model::rotate(&y, &d).unwrap();
        let fa = TruncatedSvd::new();
        for fit in [
            ruv3(&rm, &fa, 2).unwrap(),
            ruv2(&rm, &fa, 2).unwrap(),
            ruv4(&rm, &fa, 2, Ruv4Mode::Gls).unwrap(),
            ruv2_old(&y, &d, &fa, 2).unwrap(),
        ] {
            for (jj, &j) in fit.effect.columns.iter().enumerate() {
                assert!(
                    (fit.effect.beta2hat[(0, jj)] - beta[(1, j)]).abs() < 1e-6,
                    "{}",
                    fit.variant
                );
            }
        }
    }

    #[test]
    fn too_few_controls() {
        let (y, d, _) = planted(12, 20, 2, 2, 0, 1.0, 3);
        let rm = model::rotate(&y, &d).unwrap();
        assert!(matches!(
            ruv4(&rm, &TruncatedSvd::new(), 2, Ruv4Mode::Ols),
            Err(RuvError::TooFewControls { m: 2, q: 2 })
        ));
    }

    #[test]
    fn zero_dof_is_rejected() {
        let (y, d, _) = planted(4, 20, 8, 2, 1, 1.0, 4);
        let rm = model::rotate(&y, &d).unwrap();
        assert!(matches!(
            ruv3(&rm, &TruncatedSvd::new(), 2),
            Err(RuvError::ZeroDof { .. })
        ));
    }

    #[test]
    fn old_and_rotated_ruv2_agree() {
        for k1 in 0..3 {
            let (y, d, _) = planted(10, 15, 6, 2, k1, 1.0, 10 + k1 as u64);
            let rm = model::rotate(&y, &d).unwrap();
            let a = ruv2(&rm, &TruncatedSvd::new(), 2).unwrap();
            let b = ruv2_old(&y, &d, &TruncatedSvd::new(), 2).unwrap();
            assert!((a.effect.beta2hat - b.effect.beta2hat).norm() < 1e-8);
        }
    }

    #[test]
    fn control_effects_cover_controls() {
        let (y, d, _) = planted(12, 20, 8, 2, 1, 1.0, 5);
        let rm = model::rotate(&y, &d).unwrap();
        let fit = ruv3(&rm, &TruncatedSvd::new(), 2).unwrap();
        assert_eq!(fit.control_effect.columns, (0..8).collect::<Vec<_>>());
        assert_eq!(fit.effect.len(), 12);
        assert_eq!(fit.alphahat_controls().ncols(), 8);
    }
}
