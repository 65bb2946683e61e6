mod common;

use common::{gaussian, planted, rng, PlantSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ruvstar::estimators::{gls_z2, ols_z2, ConstrainedRuv4Fa};
use ruvstar::factor::FactorFit;
use ruvstar::{
    model, rotate, ruv2, ruv2_old, ruv3, ruv4, Design, FactorAnalysis, ResponseMatrix, Result,
    Ruv4Mode, RuvError, TruncatedSvd,
};

/// Truncated SVD with every variance replaced by a constant.
struct ConstantVariance(f64);

impl FactorAnalysis for ConstantVariance {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        let mut fit = TruncatedSvd::new().fit(y, q)?;
        fit.sigmahat.fill(self.0);
        Ok(fit)
    }
}

/// Returns fixed factors regardless of the input; loadings are arbitrary.
struct FixedFactors(DMatrix<f64>);

impl FactorAnalysis for FixedFactors {
    fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
        let z = self.0.columns(0, q).into_owned();
        Ok(FactorFit {
            alphahat: DMatrix::from_fn(q, y.ncols(), |i, j| 1.0 + (i + 2 * j) as f64),
            sigmahat: DVector::from_element(y.ncols(), 1.0),
            zhat: z,
        })
    }
}

/// Unit vectors orthogonal to the columns of `a` (rows of `a` = ambient dim).
fn orthogonal_complement(a: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let q = a.clone().svd(true, false).u.unwrap();
    let rank = a.rank(1e-10);
    let proj = DMatrix::identity(n, n) - q.columns(0, rank) * q.columns(0, rank).transpose();
    let mut r = rng(99);
    let raw = &proj * gaussian(n, count, &mut r);
    raw.qr().q()
}

#[test]
fn wls_oracle_for_gls_z2() {
    let p = planted(&PlantSpec::default(), 11);
    let rm = rotate(&p.y, &p.design).unwrap();
    let fit = ruv4(&rm, &TruncatedSvd::new(), 2, Ruv4Mode::Gls).unwrap();
    let ac = fit.alphahat_controls();
    let sc = fit.sigmahat_controls();
    let y2c = rm.y2_controls();
    // Weighted normal equations, solved by explicit inversion.
    let w = DMatrix::from_diagonal(&sc.map(|s| 1.0 / s));
    let lhs = &ac * &w * ac.transpose();
    let oracle = (lhs.try_inverse().unwrap() * &ac * &w * y2c.transpose()).transpose();
    assert!((&fit.z2hat - &oracle).amax() < 1e-8);

    let r22_inv = rm.r22.clone().try_inverse().unwrap();
    let ync = rm.y2_non_controls();
    let anc = select_columns(&fit.alphahat, &fit.effect.columns);
    let beta = r22_inv * (ync - &oracle * anc);
    assert!((&fit.effect.beta2hat - beta).amax() < 1e-8);
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

#[test]
fn noiseless_z2_in_both_modes() {
    let mut r = rng(12);
    let z = gaussian(2, 3, &mut r);
    let a = gaussian(3, 9, &mut r);
    let y2c = &z * &a;
    assert!((ols_z2(&y2c, &a).unwrap() - &z).amax() < 1e-10);
    let s = DVector::from_fn(9, |i, _| 0.5 + i as f64);
    assert!((gls_z2(&y2c, &a, &s).unwrap() - &z).amax() < 1e-10);
}

#[test]
fn homoscedastic_gls_is_ols() {
    let p = planted(&PlantSpec::default(), 13);
    let rm = rotate(&p.y, &p.design).unwrap();
    let fa = ConstantVariance(2.5);
    let gls = ruv4(&rm, &fa, 2, Ruv4Mode::Gls).unwrap();
    let ols = ruv4(&rm, &fa, 2, Ruv4Mode::Ols).unwrap();
    assert!((&gls.z2hat - &ols.z2hat).amax() < 1e-10);
    let r3 = ruv3(&rm, &fa, 2).unwrap();
    let y3c_fit = TruncatedSvd::new().fit(&rm.y3_controls(), 2).unwrap();
    let expected = ols_z2(&rm.y2_controls(), &y3c_fit.alphahat).unwrap();
    assert!((&r3.z2hat - expected).amax() < 1e-10);
}

#[test]
fn ruv2_recovers_noiseless_plant() {
    let p = planted(
        &PlantSpec {
            noise: 0.0,
            ..PlantSpec::default()
        },
        14,
    );
    let rm = rotate(&p.y, &p.design).unwrap();
    for fit in [
        ruv2(&rm, &TruncatedSvd::new(), 2).unwrap(),
        ruv3(&rm, &TruncatedSvd::new(), 2).unwrap(),
    ] {
        for (jj, &j) in fit.effect.columns.iter().enumerate() {
            assert!((fit.effect.beta2hat[(0, jj)] - p.beta[(1, j)]).abs() < 1e-6);
        }
    }
}

#[test]
fn factors_orthogonal_to_y3_leave_ols() {
    let p = planted(
        &PlantSpec {
            n: 20,
            p: 6,
            m: 3,
            ..PlantSpec::default()
        },
        15,
    );
    let rm = rotate(&p.y, &p.design).unwrap();
    let ols = model::ols_effects(&rm).unwrap();
    let z3 = orthogonal_complement(&rm.y3, 1);
    let fit = ruv3(&rm, &FixedFactors(z3.clone()), 1).unwrap();
    for &j in &fit.effect.columns {
        assert!(fit.alphahat[(0, j)].abs() < 1e-10);
    }
    assert!((&fit.effect.beta2hat - &ols.beta2hat).amax() < 1e-10);

    // RUV2 regresses all of Y3 on the factor block.
    let mut z23 = DMatrix::zeros(rm.k2() + z3.nrows(), 1);
    z23.rows_mut(rm.k2(), z3.nrows()).copy_from(&z3);
    z23[(0, 0)] = 0.7;
    let fit = ruv2(&rm, &FixedFactors(z23), 1).unwrap();
    assert!(fit.alphahat.amax() < 1e-10);
    assert!((&fit.effect.beta2hat - &ols.beta2hat).amax() < 1e-10);
}

#[test]
fn ruv2_old_with_factors_orthogonal_to_x_is_ols() {
    let mut r = rng(16);
    let x = gaussian(10, 2, &mut r);
    let y = gaussian(10, 8, &mut r);
    let z = orthogonal_complement(&x, 2);
    let d = Design::new(x.clone(), 0, vec![0, 1, 2]).unwrap();
    let fit = ruv2_old(
        &ResponseMatrix::new(y.clone()).unwrap(),
        &d,
        &FixedFactors(z),
        2,
    )
    .unwrap();
    let full = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
    for (jj, &j) in fit.effect.columns.iter().enumerate() {
        for i in 0..2 {
            assert!((fit.effect.beta2hat[(i, jj)] - full[(i, j)]).abs() < 1e-10);
        }
    }
}

#[test]
fn ruv2_old_matches_ruv2_with_nuisance() {
    for (k1, seed) in [(0, 17), (1, 18), (2, 19)] {
        let p = planted(
            &PlantSpec {
                k1,
                n: 14,
                ..PlantSpec::default()
            },
            seed,
        );
        let rm = rotate(&p.y, &p.design).unwrap();
        let a = ruv2_old(&p.y, &p.design, &TruncatedSvd::new(), 2).unwrap();
        let b = ruv2(&rm, &TruncatedSvd::new(), 2).unwrap();
        assert!(
            (&a.effect.beta2hat - &b.effect.beta2hat).amax() < 1e-8,
            "k1 = {k1}"
        );
    }
}

#[test]
fn constrained_fa_zero_block_has_zero_loadings() {
    let mut r = rng(20);
    let mut y = gaussian(9, 12, &mut r);
    for j in 5..12 {
        y.column_mut(j).fill(0.0);
    }
    let fa = ConstrainedRuv4Fa {
        base: TruncatedSvd::new(),
        controls: (0..5).collect(),
    };
    let fit = fa.fit(&y, 2).unwrap();
    assert!(fit.alphahat.columns(5, 7).amax() < 1e-12);
    let direct = TruncatedSvd::new()
        .fit(&y.columns(0, 5).into_owned(), 2)
        .unwrap();
    assert_eq!(fit.zhat, direct.zhat);
}

#[test]
fn count_errors() {
    let p = planted(
        &PlantSpec {
            m: 2,
            ..PlantSpec::default()
        },
        21,
    );
    let rm = rotate(&p.y, &p.design).unwrap();
    let fa = TruncatedSvd::new();
    assert!(matches!(
        ruv3(&rm, &fa, 2),
        Err(RuvError::TooFewControls { m: 2, q: 2 })
    ));
    assert!(ruv4(&rm, &fa, 0, Ruv4Mode::Ols).is_err());
    let small = planted(
        &PlantSpec {
            n: 5,
            ..PlantSpec::default()
        },
        22,
    );
    let rm = rotate(&small.y, &small.design).unwrap();
    assert!(matches!(ruv2(&rm, &fa, 3), Err(RuvError::ZeroDof { .. })));
}

#[test]
fn singular_control_loadings_are_an_error() {
    let a = DMatrix::from_fn(2, 6, |_, j| j as f64 + 1.0);
    let y2c = DMatrix::from_element(1, 6, 1.0);
    assert!(matches!(
        ols_z2(&y2c, &a),
        Err(RuvError::SingularControl { .. })
    ));
}

#[test]
fn null_effects_are_unbiased() {
    let spec = PlantSpec {
        n: 16,
        p: 40,
        m: 15,
        beta_scale: 0.0,
        ..PlantSpec::default()
    };
    let reps = 200;
    let fa = TruncatedSvd::new();
    let mut sums = vec![Vec::new(); 5];
    for rep in 0..reps {
        let p = planted(&spec, 5000 + rep);
        let rm = rotate(&p.y, &p.design).unwrap();
        let fits = [
            ruv2(&rm, &fa, 2).unwrap(),
            ruv2_old(&p.y, &p.design, &fa, 2).unwrap(),
            ruv3(&rm, &fa, 2).unwrap(),
            ruv4(&rm, &fa, 2, Ruv4Mode::Ols).unwrap(),
            ruv4(&rm, &fa, 2, Ruv4Mode::Gls).unwrap(),
        ];
        for (s, f) in sums.iter_mut().zip(fits.iter()) {
            s.push(f.effect.beta2hat.mean());
        }
    }
    for (i, s) in sums.iter().enumerate() {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = mean / (var / n).sqrt();
        assert!(z.abs() < 3.0, "estimator {i}: z = {z}");
    }
}

#[test]
fn effects_cover_non_controls_only() {
    let p = planted(&PlantSpec::default(), 23);
    let rm = rotate(&p.y, &p.design).unwrap();
    let fit = ruv3(&rm, &TruncatedSvd::new(), 2).unwrap();
    assert_eq!(fit.effect.columns, (10..30).collect::<Vec<_>>());
    assert_eq!(fit.control_effect.columns, (0..10).collect::<Vec<_>>());
    assert_eq!(fit.z2hat.shape(), (1, 2));
    assert_eq!(fit.alphahat.shape(), (2, 30));
    assert!(fit.effect.dof.iter().all(|&d| d == 12.0 - 2.0 - 2.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gls_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let a = gaussian(2, 8, &mut r);
        let y = gaussian(2, 8, &mut r);
        let s = DVector::from_fn(8, |i, _| 0.2 + (i as f64 * 0.37).sin().abs());
        let base = gls_z2(&y, &a, &s).unwrap();
        let scaled = gls_z2(&y, &a, &(&s * c)).unwrap();
        prop_assert!((&base - &scaled).amax() <= 1e-12 * base.amax().max(1.0));
    }

    #[test]
    fn ruv3_scale_invariant_in_variances(seed in 0u64..1000, c in 0.1f64..10.0) {
        struct Scaled(f64);
        impl FactorAnalysis for Scaled {
            fn fit(&self, y: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
                let mut f = TruncatedSvd::new().fit(y, q)?;
                f.sigmahat *= self.0;
                Ok(f)
            }
        }
        let p = planted(&PlantSpec::default(), seed);
        let rm = rotate(&p.y, &p.design).unwrap();
        let a = ruv4(&rm, &Scaled(1.0), 2, Ruv4Mode::Gls).unwrap();
        let b = ruv4(&rm, &Scaled(c), 2, Ruv4Mode::Gls).unwrap();
        prop_assert!((&a.z2hat - &b.z2hat).amax() <= 1e-12 * a.z2hat.amax().max(1.0));
    }
}
