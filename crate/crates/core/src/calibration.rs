//! Post-hoc standard-error machinery: control-gene calibration, MAD
//! calibration, empirical Bayes variance moderation (EBVM) and the
//! variance-inflation MLE for the GLS control regression.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use statrs::function::gamma::digamma;

use crate::error::{Result, RuvError};
use crate::linalg;
use crate::model::EffectResult;

/// Normal-consistency constant for the median absolute deviation.
pub const MAD_CONSTANT: f64 = 1.4826;

/// Prior degrees of freedom reported when the moderation prior degenerates
/// to a point mass.
pub const EBVM_D0_CAP: f64 = 1e6;

/// Inflation factors below this are reported as a perfect fit.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMethod {
    Control,
    Mad,
    Ebvm,
    LambdaMle,
}

impl CalibrationMethod {
    pub fn label(self) -> &'static str {
        match self {
            CalibrationMethod::Control => "CTL",
            CalibrationMethod::Mad => "MAD",
            CalibrationMethod::Ebvm => "EBVM",
            CalibrationMethod::LambdaMle => "LAMBDA_MLE",
        }
    }
}

/// What a calibration step did. `lambda` has one entry per covariate of
/// interest (one entry for EBVM: the prior scale). For MAD, `center` holds the
/// medians and `lambda` the normal-consistent MADs; for EBVM `lambda` is the
/// prior variance and `prior_dof` the prior degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub method: CalibrationMethod,
    pub lambda: Vec<f64>,
    pub center: Option<Vec<f64>>,
    pub prior_dof: Option<f64>,
    pub flagged: bool,
    pub inputs_hash: String,
}

pub(crate) fn hash_values<'a>(parts: impl IntoIterator<Item = &'a DMatrix<f64>>) -> String {
    let mut h = Sha256::new();
    for m in parts {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Per-covariate `lambda = sqrt(mean_{j in C} (beta_j / s_j)^2)`.
pub fn control_lambda(controls: &EffectResult) -> Result<Vec<f64>> {
    if controls.is_empty() {
        return Err(RuvError::DegenerateCalibration(
            "no control statistics supplied".into(),
        ));
    }
    let m = controls.len() as f64;
    (0..controls.k2())
        .map(|i| {
            let lam = (controls
                .beta2hat
                .row(i)
                .iter()
                .zip(controls.se.row(i).iter())
                .map(|(b, s)| (b / s).powi(2))
                .sum::<f64>()
                / m)
                .sqrt();
            if lam > 0.0 && lam.is_finite() {
                Ok(lam)
            } else {
                Err(RuvError::DegenerateCalibration(format!(
                    "control t-statistics give lambda = {lam}"
                )))
            }
        })
        .collect()
}

/// Multiplies standard errors by the control-gene factor `lambda`.
pub fn control_calibrate(
    e: &EffectResult,
    controls: &EffectResult,
) -> Result<(EffectResult, CalibrationReport)> {
    if controls.k2() != e.k2() {
        return Err(RuvError::shape("control and target effects differ in k2"));
    }
    let lambda = control_lambda(controls)?;
    let out = scale_rows(e, &lambda)?;
    let report = CalibrationReport {
        method: CalibrationMethod::Control,
        lambda,
        center: None,
        prior_dof: None,
        flagged: false,
        inputs_hash: hash_values([&controls.beta2hat, &controls.se]),
    };
    Ok((out, report))
}

fn scale_rows(e: &EffectResult, factors: &[f64]) -> Result<EffectResult> {
    let mut se = e.se.clone();
    for (i, f) in factors.iter().enumerate() {
        se.row_mut(i).scale_mut(*f);
    }
    e.with_se(se)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median and normal-consistent MAD of `values`.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let center = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    (center, MAD_CONSTANT * median(&dev))
}

/// Centers each covariate's t-statistics by their median and scales them by
/// their MAD. Standard errors are multiplied by the MAD and estimates shifted
/// by `-median * se`, so that `t = beta / se` still holds.
pub fn mad_calibrate(e: &EffectResult) -> Result<(EffectResult, CalibrationReport)> {
    if e.len() < 2 {
        return Err(RuvError::DegenerateCalibration(
            "MAD calibration needs at least two genes".into(),
        ));
    }
    let mut centers = Vec::with_capacity(e.k2());
    let mut scales = Vec::with_capacity(e.k2());
    let mut tnew = e.tstat.clone();
    let mut beta = e.beta2hat.clone();
    let mut se = e.se.clone();
    for i in 0..e.k2() {
        let t: Vec<f64> = e.tstat.row(i).iter().copied().collect();
        let (c, mad) = median_mad(&t);
        if !(mad > 0.0) {
            return Err(RuvError::DegenerateCalibration(
                "median absolute deviation of t-statistics is zero".into(),
            ));
        }
        for j in 0..e.len() {
            tnew[(i, j)] = (t[j] - c) / mad;
            beta[(i, j)] -= c * e.se[(i, j)];
            se[(i, j)] *= mad;
        }
        centers.push(c);
        scales.push(mad);
    }
    let mut out = EffectResult::new(e.columns.clone(), beta, se, e.dof.clone(), e.method.clone())?;
    out.se_floored |= e.se_floored;
    out.tstat = tnew;
    let report = CalibrationReport {
        method: CalibrationMethod::Mad,
        lambda: scales,
        center: Some(centers),
        prior_dof: None,
        flagged: false,
        inputs_hash: hash_values([&e.tstat]),
    };
    Ok((out, report))
}

/// Scaled inverse-chi-square prior `(d0, s0^2)` on gene variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbvmPrior {
    pub d0: f64,
    pub s0sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbvmOutput {
    pub variances: Vec<f64>,
    pub dofs: Vec<f64>,
    /// `None` when fewer than three genes were supplied (pass-through).
    pub prior: Option<EbvmPrior>,
}

/// Method-of-moments fit of the variance prior on log variances.
///
/// With `e_j = log s_j^2 - digamma(d_j/2) + log(d_j/2)`, the prior dof solves
/// `trigamma(d0/2) = var(e) - mean(trigamma(d_j/2))` and
/// `s0^2 = exp(mean(e) + digamma(d0/2) - log(d0/2))`. When the observed
/// dispersion does not exceed sampling noise the prior is a point mass:
/// `d0` is capped at [`EBVM_D0_CAP`] and `s0^2` is the pooled variance.
pub fn fit_ebvm_prior(variances: &[f64], dofs: &[f64]) -> Result<Option<EbvmPrior>> {
    if variances.len() != dofs.len() {
        return Err(RuvError::shape("variances and dofs differ in length"));
    }
    if variances.iter().any(|v| !(*v > 0.0)) || dofs.iter().any(|d| !(*d > 0.0)) {
        return Err(RuvError::invalid("EBVM needs positive variances and dofs"));
    }
    let n = variances.len();
    if n < 3 {
        return Ok(None);
    }
    let e: Vec<f64> = variances
        .iter()
        .zip(dofs)
        .map(|(s2, d)| s2.ln() - digamma(d / 2.0) + (d / 2.0).ln())
        .collect();
    let emean = e.iter().sum::<f64>() / n as f64;
    let evar = e.iter().map(|x| (x - emean).powi(2)).sum::<f64>() / (n - 1) as f64
        - dofs.iter().map(|d| trigamma(d / 2.0)).sum::<f64>() / n as f64;
    if evar > 0.0 {
        let d0 = (2.0 * trigamma_inverse(evar)).min(EBVM_D0_CAP);
        let s0sq = (emean + digamma(d0 / 2.0) - (d0 / 2.0).ln()).exp();
        Ok(Some(EbvmPrior { d0, s0sq }))
    } else {
        let pooled =
            variances.iter().zip(dofs).map(|(s, d)| s * d).sum::<f64>() / dofs.iter().sum::<f64>();
        Ok(Some(EbvmPrior {
            d0: EBVM_D0_CAP,
            s0sq: pooled,
        }))
    }
}

/// Posterior variances `(d0 s0^2 + d_j s_j^2) / (d0 + d_j)` with dof
/// `d0 + d_j` under a given prior.
pub fn ebvm_with_prior(variances: &[f64], dofs: &[f64], prior: EbvmPrior) -> EbvmOutput {
    let (vars, ds) = variances
        .iter()
        .zip(dofs)
        .map(|(s2, d)| {
            let total = prior.d0 + d;
            ((prior.d0 * prior.s0sq + d * s2) / total, total)
        })
        .unzip();
    EbvmOutput {
        variances: vars,
        dofs: ds,
        prior: Some(prior),
    }
}

/// Empirical Bayes variance moderation.
pub fn ebvm(variances: &[f64], dofs: &[f64]) -> Result<EbvmOutput> {
    match fit_ebvm_prior(variances, dofs)? {
        Some(prior) => Ok(ebvm_with_prior(variances, dofs, prior)),
        None => {
            log::warn!(
                "variance moderation needs at least 3 genes, got {}; passing through",
                variances.len()
            );
            Ok(EbvmOutput {
                variances: variances.to_vec(),
                dofs: dofs.to_vec(),
                prior: None,
            })
        }
    }
}

/// Moderates the variances behind an effect result. Each gene's variance is
/// recovered as `se^2 / multiplier` for the first covariate, so the
/// per-covariate multipliers are preserved.
pub fn ebvm_effects(e: &EffectResult) -> Result<(EffectResult, Option<CalibrationReport>)> {
    let k2 = e.k2();
    let s2: Vec<f64> = (0..e.len()).map(|j| e.se[(0, j)].powi(2)).collect();
    let dofs: Vec<f64> = e.dof.iter().copied().collect();
    let out = ebvm(&s2, &dofs)?;
    let Some(prior) = out.prior else {
        return Ok((e.clone(), None));
    };
    let se = DMatrix::from_fn(k2, e.len(), |i, j| {
        e.se[(i, j)] * (out.variances[j] / s2[j]).sqrt()
    });
    let mut res = e.with_se(se)?;
    res.dof = DVector::from_vec(out.dofs);
    let report = CalibrationReport {
        method: CalibrationMethod::Ebvm,
        lambda: vec![prior.s0sq],
        center: None,
        prior_dof: Some(prior.d0),
        flagged: prior.d0 >= EBVM_D0_CAP,
        inputs_hash: hash_values([&e.se]),
    };
    Ok((res, Some(report)))
}

/// Trigamma function `psi'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0))) * x2 / x
}

fn tetragamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc - x2 - x2 / x - x2 * x2 * (0.5 - x2 * (1.0 / 6.0 - x2 * (1.0 / 6.0 - x2 * 0.3)))
}

/// Solves `trigamma(x) = y` for `x > 0` by Newton iteration.
pub fn trigamma_inverse(y: f64) -> f64 {
    if y > 1e7 {
        return 1.0 / y.sqrt();
    }
    if y < 1e-6 {
        return 1.0 / y;
    }
    let mut x = 0.5 + 1.0 / y;
    for _ in 0..50 {
        let tri = trigamma(x);
        let dif = tri * (1.0 - tri / y) / tetragamma(x);
        x += dif;
        if -dif / x < 1e-8 {
            break;
        }
    }
    x
}

/// Outcome of the variance-inflation MLE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMle {
    pub lambda: f64,
    /// Set when `lambda` fell below [`LAMBDA_FLOOR`] (perfect fit).
    pub flagged: bool,
}

/// `lambda = tr[(Y2C - Z2 aC) S^{-1} (Y2C - Z2 aC)'] / (k2 m)`.
pub fn lambda_mle(
    y2c: &DMatrix<f64>,
    z2hat: &DMatrix<f64>,
    alphahat_c: &DMatrix<f64>,
    sigmahat_c: &DVector<f64>,
) -> Result<LambdaMle> {
    let (k2, m) = y2c.shape();
    if z2hat.nrows() != k2 || alphahat_c.shape() != (z2hat.ncols(), m) || sigmahat_c.len() != m {
        return Err(RuvError::shape(format!(
            "Y2C {:?}, Z2 {:?}, alphaC {:?}, sigmaC {}",
            y2c.shape(),
            z2hat.shape(),
            alphahat_c.shape(),
            sigmahat_c.len()
        )));
    }
    if sigmahat_c.iter().any(|s| !(*s > 0.0)) {
        return Err(RuvError::invalid("control variances must be positive"));
    }
    let resid = y2c - z2hat * alphahat_c;
    let weighted = linalg::scale_columns(&resid, &sigmahat_c.map(|s| 1.0 / s));
    let trace = weighted.component_mul(&resid).sum();
    let lambda = trace / (k2 * m) as f64;
    Ok(LambdaMle {
        lambda,
        flagged: lambda < LAMBDA_FLOOR,
    })
}

/// Inflates variances by `lambda` (standard errors by `sqrt(lambda)`).
/// A flagged (zero) lambda leaves the standard errors untouched.
pub fn lambda_inflate(e: &EffectResult, fit: LambdaMle) -> Result<EffectResult> {
    if fit.flagged {
        return Ok(e.clone());
    }
    scale_rows(e, &vec![fit.lambda.sqrt(); e.k2()])
}

/// Variance-inflation MLE followed by inflation of `e`.
pub fn lambda_mle_cate(
    y2c: &DMatrix<f64>,
    z2hat: &DMatrix<f64>,
    alphahat_c: &DMatrix<f64>,
    sigmahat_c: &DVector<f64>,
    e: &EffectResult,
) -> Result<(EffectResult, CalibrationReport)> {
    let fit = lambda_mle(y2c, z2hat, alphahat_c, sigmahat_c)?;
    let out = lambda_inflate(e, fit)?;
    let report = CalibrationReport {
        method: CalibrationMethod::LambdaMle,
        lambda: vec![fit.lambda],
        center: None,
        prior_dof: None,
        flagged: fit.flagged,
        inputs_hash: hash_values([y2c, z2hat, alphahat_c]),
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn effect(beta: &[f64], se: &[f64]) -> EffectResult {
        let n = beta.len();
        EffectResult::new(
            (0..n).collect(),
            DMatrix::from_row_slice(1, n, beta),
            DMatrix::from_row_slice(1, n, se),
            DVector::from_element(n, 10.0),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn unit_control_stats_leave_se_unchanged() {
        let ctl = effect(&[0.5, -0.3, 2.0], &[0.5, 0.3, 2.0]);
        let e = effect(&[1.0, 2.0], &[0.1, 0.2]);
        let (out, rep) = control_calibrate(&e, &ctl).unwrap();
        assert!((rep.lambda[0] - 1.0).abs() < 1e-15);
        assert!((out.se - e.se).norm() < 1e-15);
    }

    #[test]
    fn control_lambda_sqrt_two() {
        let ctl = effect(&[2.0, 0.0], &[1.0, 1.0]);
        assert_eq!(control_lambda(&ctl).unwrap()[0], 2f64.sqrt());
    }

    #[test]
    fn zero_control_stats_are_degenerate() {
        let ctl = effect(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(
            control_lambda(&ctl),
            Err(RuvError::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn mad_symmetric_set() {
        let e = effect(&[-2.0, -1.0, 0.0, 1.0, 2.0], &[1.0; 5]);
        let (out, rep) = mad_calibrate(&e).unwrap();
        assert_eq!(rep.center.as_ref().unwrap()[0], 0.0);
        assert!((rep.lambda[0] - 1.4826).abs() < 1e-15);
        for j in 0..5 {
            assert!((out.tstat[(0, j)] - e.tstat[(0, j)] / 1.4826).abs() < 1e-15);
        }
    }

    #[test]
    fn mad_translation_invariant() {
        let t = [-1.3, 0.2, 0.4, 2.5, -0.7, 1.1];
        let shifted: Vec<f64> = t.iter().map(|v| v + 5.0).collect();
        let (a, _) = mad_calibrate(&effect(&t, &[1.0; 6])).unwrap();
        let (b, _) = mad_calibrate(&effect(&shifted, &[1.0; 6])).unwrap();
        assert!((a.tstat - b.tstat).norm() < 1e-12);
    }

    #[test]
    fn mad_zero_is_degenerate() {
        let e = effect(&[1.0, 1.0, 1.0, 2.0], &[1.0; 4]);
        assert!(mad_calibrate(&e).is_err());
    }

    #[test]
    fn trigamma_known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        for y in [0.01, 0.3, 2.0, 50.0] {
            assert!((trigamma(trigamma_inverse(y)) - y).abs() < 1e-8 * y);
        }
    }

    #[test]
    fn ebvm_constant_variances_are_unchanged() {
        let v = vec![0.7; 10];
        let d = vec![5.0; 10];
        let out = ebvm(&v, &d).unwrap();
        assert_eq!(out.prior.unwrap().d0, EBVM_D0_CAP);
        for s in out.variances {
            assert!((s - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn ebvm_zero_prior_dof_is_identity() {
        let v = [0.2, 1.5, 3.0];
        let d = [4.0, 4.0, 4.0];
        let out = ebvm_with_prior(&v, &d, EbvmPrior { d0: 0.0, s0sq: 1.0 });
        assert_eq!(out.variances, v.to_vec());
    }

    #[test]
    fn ebvm_passes_through_small_inputs() {
        let out = ebvm(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(out.prior.is_none());
        assert_eq!(out.variances, vec![1.0, 2.0]);
    }

    #[test]
    fn lambda_perfect_fit_is_flagged() {
        let z = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, 1.0, -1.0]);
        let y = &z * &a;
        let fit = lambda_mle(&y, &z, &a, &DVector::from_element(3, 1.0)).unwrap();
        assert!(fit.flagged);
        assert!(fit.lambda.abs() < 1e-20);
    }

    #[test]
    fn lambda_trace_identity() {
        let r = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, 2.0, 0.25]);
        let z = DMatrix::zeros(1, 1);
        let a = DMatrix::from_element(1, 4, 1.0);
        let fit = lambda_mle(&r, &z, &a, &DVector::from_element(4, 1.0)).unwrap();
        assert!((fit.lambda - r.norm_squared() / 4.0).abs() < 1e-14);
    }
}
