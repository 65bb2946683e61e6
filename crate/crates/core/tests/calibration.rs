mod common;

use common::{gaussian, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{ChiSquared, Distribution};
use ruvstar::calibration::{
    control_calibrate, control_lambda, ebvm, ebvm_effects, fit_ebvm_prior, lambda_mle,
    lambda_mle_cate, mad_calibrate, median_mad, EBVM_D0_CAP, MAD_CONSTANT,
};
use ruvstar::{EffectResult, RuvError};

fn effect(beta: &[f64], se: &[f64]) -> EffectResult {
    let n = beta.len();
    EffectResult::new(
        (0..n).collect(),
        DMatrix::from_row_slice(1, n, beta),
        DMatrix::from_row_slice(1, n, se),
        DVector::from_element(n, 8.0),
        "test",
    )
    .unwrap()
}

fn sorted_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn order_by_abs_t(e: &EffectResult) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..e.len()).collect();
    idx.sort_by(|&a, &b| e.tstat[(0, b)].abs().total_cmp(&e.tstat[(0, a)].abs()));
    idx
}

#[test]
fn control_lambda_arithmetic() {
    let ctl = effect(&[2.0, 0.0], &[1.0, 1.0]);
    let lam = control_lambda(&ctl).unwrap();
    assert!((lam[0] - 2.0_f64.sqrt()).abs() < 1e-15);
    let zero = effect(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]);
    assert!(matches!(
        control_lambda(&zero),
        Err(RuvError::DegenerateCalibration(_))
    ));
}

#[test]
fn control_calibration_matches_formula() {
    let mut r = rng(41);
    let b = gaussian(1, 25, &mut r);
    let s = gaussian(1, 25, &mut r).map(|v| 0.2 + v.abs());
    let ctl = effect(b.as_slice(), s.as_slice());
    let target = effect(&[1.0, -3.0, 0.5], &[0.4, 1.1, 0.2]);
    let (out, rep) = control_calibrate(&target, &ctl).unwrap();
    let mut acc = 0.0;
    for j in 0..25 {
        acc += (b[j] / s[j]) * (b[j] / s[j]);
    }
    let lambda = (acc / 25.0).sqrt();
    assert!((rep.lambda[0] - lambda).abs() < 1e-12);
    for j in 0..3 {
        assert!((out.se[(0, j)] - lambda * target.se[(0, j)]).abs() < 1e-12);
        assert!((out.tstat[(0, j)] - target.beta2hat[(0, j)] / out.se[(0, j)]).abs() < 1e-12);
        assert_eq!(out.beta2hat[(0, j)], target.beta2hat[(0, j)]);
    }
}

#[test]
fn control_calibration_is_idempotent_when_calibrated() {
    let ctl = effect(&[0.3, -0.7, 1.2, -0.4], &[0.3, 0.7, 1.2, 0.4]);
    let target = effect(&[1.0, 2.0, -0.5], &[0.5, 0.5, 0.5]);
    let (once, _) = control_calibrate(&target, &ctl).unwrap();
    let (twice, rep) = control_calibrate(&once, &ctl).unwrap();
    assert!((rep.lambda[0] - 1.0).abs() < 1e-15);
    assert!((once.se.clone() - twice.se).amax() < 1e-15);
}

#[test]
fn mad_on_symmetric_set() {
    let (center, mad) = median_mad(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
    assert_eq!(center, 0.0);
    assert!((mad - 1.4826).abs() < 1e-15);
    let e = effect(&[-2.0, -1.0, 0.0, 1.0, 2.0], &[1.0; 5]);
    let (out, rep) = mad_calibrate(&e).unwrap();
    for j in 0..5 {
        assert!((out.tstat[(0, j)] - e.tstat[(0, j)] / MAD_CONSTANT).abs() < 1e-12);
    }
    assert_eq!(rep.center.as_deref(), Some(&[0.0][..]));
}

#[test]
fn mad_is_shift_invariant() {
    let t = [-1.3, 0.2, 2.5, -0.4, 0.9, 1.7];
    let shifted: Vec<f64> = t.iter().map(|v| v + 5.0).collect();
    let (a, _) = mad_calibrate(&effect(&t, &[1.0; 6])).unwrap();
    let (b, _) = mad_calibrate(&effect(&shifted, &[1.0; 6])).unwrap();
    assert!((a.tstat - b.tstat).amax() < 1e-12);
}

#[test]
fn mad_matches_direct_oracle() {
    let mut r = rng(42);
    let beta = gaussian(1, 37, &mut r).map(|v| v * 3.0 + 0.4);
    let se = gaussian(1, 37, &mut r).map(|v| 0.5 + v.abs());
    let e = effect(beta.as_slice(), se.as_slice());
    let t: Vec<f64> = (0..37).map(|j| beta[j] / se[j]).collect();
    let med = sorted_median(&t);
    let dev: Vec<f64> = t.iter().map(|v| (v - med).abs()).collect();
    let mad = 1.4826 * sorted_median(&dev);
    let (out, rep) = mad_calibrate(&e).unwrap();
    assert!((rep.center.as_ref().unwrap()[0] - med).abs() < 1e-12);
    assert!((rep.lambda[0] - mad).abs() < 1e-12);
    let tt: Vec<f64> = out.tstat.iter().copied().collect();
    for j in 0..37 {
        assert!((tt[j] - (t[j] - med) / mad).abs() < 1e-12);
    }
    let (c2, m2) = median_mad(&tt);
    assert!(c2.abs() < 1e-12);
    assert!((m2 - 1.0).abs() < 1e-12);
}

#[test]
fn mad_rejects_degenerate_input() {
    assert!(mad_calibrate(&effect(&[1.0], &[1.0])).is_err());
    assert!(matches!(
        mad_calibrate(&effect(&[1.0, 1.0, 1.0, 2.0], &[1.0; 4])),
        Err(RuvError::DegenerateCalibration(_))
    ));
}

#[test]
fn ebvm_equal_variances_hit_the_cap() {
    let out = ebvm(&[2.0; 50], &[6.0; 50]).unwrap();
    let prior = out.prior.unwrap();
    assert_eq!(prior.d0, EBVM_D0_CAP);
    assert!(out.variances.iter().all(|v| (v - 2.0).abs() < 1e-12));
    assert!(out.dofs.iter().all(|&d| d == 6.0 + EBVM_D0_CAP));
}

#[test]
fn ebvm_without_pooling_passes_through() {
    let v = [0.1, 3.0, 0.5];
    let out = ruvstar::calibration::ebvm_with_prior(
        &v,
        &[4.0; 3],
        ruvstar::calibration::EbvmPrior { d0: 0.0, s0sq: 7.0 },
    );
    assert_eq!(out.variances, v.to_vec());
    assert_eq!(out.dofs, vec![4.0; 3]);
    let few = ebvm(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
    assert!(few.prior.is_none());
    assert_eq!(few.variances, vec![1.0, 2.0]);
}

#[test]
fn ebvm_recovers_prior_scale() {
    let (d, d0, s0sq) = (5.0, 10.0, 2.0);
    for seed in 0..20 {
        let mut r = rng(4300 + seed);
        let prior = ChiSquared::new(d0).unwrap();
        let sampling = ChiSquared::new(d).unwrap();
        let vars: Vec<f64> = (0..1000)
            .map(|_| {
                let sigma2 = d0 * s0sq / prior.sample(&mut r);
                sigma2 * sampling.sample(&mut r) / d
            })
            .collect();
        let fit = fit_ebvm_prior(&vars, &vec![d; 1000]).unwrap().unwrap();
        assert!(
            (fit.s0sq - s0sq).abs() < 0.1 * s0sq,
            "seed {seed}: s0^2 = {}",
            fit.s0sq
        );
    }
}

#[test]
fn ebvm_effects_keeps_estimates() {
    let mut r = rng(44);
    let beta = gaussian(1, 40, &mut r);
    let se = gaussian(1, 40, &mut r).map(|v| 0.3 + v.abs());
    let e = effect(beta.as_slice(), se.as_slice());
    let (out, rep) = ebvm_effects(&e).unwrap();
    assert_eq!(out.beta2hat, e.beta2hat);
    let rep = rep.unwrap();
    assert!(out.dof.iter().all(|&v| v == 8.0 + rep.prior_dof.unwrap()));
}

#[test]
fn lambda_mle_flags_exact_fit() {
    let mut r = rng(45);
    let z2 = gaussian(1, 2, &mut r);
    let a = gaussian(2, 9, &mut r);
    let y2c = &z2 * &a;
    let fit = lambda_mle(&y2c, &z2, &a, &DVector::from_element(9, 1.0)).unwrap();
    assert!(fit.flagged);
    let e = effect(&[1.0], &[0.5]);
    let (out, rep) = lambda_mle_cate(&y2c, &z2, &a, &DVector::from_element(9, 1.0), &e).unwrap();
    assert!(rep.flagged);
    assert_eq!(out.se, e.se);
}

#[test]
fn lambda_mle_trace_identity() {
    let mut r = rng(46);
    let z2 = gaussian(1, 2, &mut r);
    let a = gaussian(2, 11, &mut r);
    let resid = gaussian(1, 11, &mut r);
    let y2c = &z2 * &a + &resid;
    let fit = lambda_mle(&y2c, &z2, &a, &DVector::from_element(11, 1.0)).unwrap();
    assert!((fit.lambda - resid.norm_squared() / 11.0).abs() < 1e-12);
    let e = effect(&[1.0, 2.0], &[0.5, 0.25]);
    let (out, _) = lambda_mle_cate(&y2c, &z2, &a, &DVector::from_element(11, 1.0), &e).unwrap();
    for j in 0..2 {
        assert!((out.se[(0, j)] - fit.lambda.sqrt() * e.se[(0, j)]).abs() < 1e-12);
    }
}

#[test]
fn lambda_mle_shape_errors() {
    let z2 = DMatrix::zeros(1, 2);
    let a = DMatrix::zeros(2, 5);
    assert!(matches!(
        lambda_mle(
            &DMatrix::zeros(1, 4),
            &z2,
            &a,
            &DVector::from_element(5, 1.0)
        ),
        Err(RuvError::Shape(_))
    ));
    assert!(lambda_mle(&DMatrix::zeros(1, 5), &z2, &a, &DVector::zeros(5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_scales_inversely_with_sigma(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let z2 = gaussian(2, 3, &mut r);
        let a = gaussian(3, 10, &mut r);
        let y2c = gaussian(2, 10, &mut r);
        let s = gaussian(10, 1, &mut r).map(|v| 0.1 + v.abs());
        let base = lambda_mle(&y2c, &z2, &a, &DVector::from_column_slice(s.as_slice())).unwrap();
        let scaled = lambda_mle(&y2c, &z2, &a, &DVector::from_column_slice(s.as_slice()).scale(c)).unwrap();
        prop_assert!((scaled.lambda - base.lambda / c).abs() <= 1e-12 * base.lambda.max(1.0) / c.min(1.0));
    }

    #[test]
    fn multiplicative_calibration_keeps_ranking(seed in any::<u64>()) {
        let mut r = rng(seed);
        let beta = gaussian(1, 30, &mut r);
        let se = gaussian(1, 30, &mut r).map(|v| 0.2 + v.abs());
        let e = effect(beta.as_slice(), se.as_slice());
        let cb = gaussian(1, 8, &mut r);
        let ctl = effect(cb.as_slice(), &[0.7; 8]);
        let (cal, _) = control_calibrate(&e, &ctl).unwrap();
        prop_assert_eq!(order_by_abs_t(&cal), order_by_abs_t(&e));

        let z2 = gaussian(1, 2, &mut r);
        let a = gaussian(2, 8, &mut r);
        let (inf, _) = lambda_mle_cate(&cb, &z2, &a, &DVector::from_element(8, 1.0), &e).unwrap();
        prop_assert_eq!(order_by_abs_t(&inf), order_by_abs_t(&e));
    }
}
