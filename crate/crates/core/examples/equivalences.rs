//! RUV3 sits between RUV2 and RUV4: with a factor analysis that is
//! constrained to the controls, RUV4 (GLS) and RUV2 both reproduce RUV3.
//!
//! cargo run --example equivalences

use nalgebra::DMatrix;
use ruvstar::estimators::{ConstrainedRuv2Fa, ConstrainedRuv4Fa};
use ruvstar::simulation::{make_dataset, Scenario};
use ruvstar::{rotate, ruv2, ruv3, ruv4, Ruv4Mode, TruncatedSvd};

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn main() -> ruvstar::Result<()> {
    let scenario = Scenario {
        n: 12,
        p: 300,
        m: 40,
        ..Scenario::default()
    };
    let ds = make_dataset(&scenario, 4)?;
    let rm = rotate(&ds.y, &ds.design)?;
    let q = 2;

    let r3 = ruv3(&rm, &TruncatedSvd::new(), q)?;
    let as_ruv4 = ruv4(
        &rm,
        &ConstrainedRuv4Fa {
            base: TruncatedSvd::new(),
            controls: ds.design.controls().to_vec(),
        },
        q,
        Ruv4Mode::Gls,
    )?;
    let as_ruv2 = ruv2(
        &rm,
        &ConstrainedRuv2Fa {
            base: TruncatedSvd::new(),
            k2: ds.design.k2(),
        },
        q,
    )?;
    println!(
        "max |ruv3 - ruv4(constrained)| = {:.2e}",
        max_diff(&r3.effect.beta2hat, &as_ruv4.effect.beta2hat)
    );
    println!(
        "max |ruv3 - ruv2(constrained)| = {:.2e}",
        max_diff(&r3.effect.beta2hat, &as_ruv2.effect.beta2hat)
    );

    // With the unconstrained analysis the three estimators differ.
    let plain4 = ruv4(&rm, &TruncatedSvd::new(), q, Ruv4Mode::Gls)?;
    let plain2 = ruv2(&rm, &TruncatedSvd::new(), q)?;
    println!(
        "max |ruv3 - ruv4| = {:.2e}",
        max_diff(&r3.effect.beta2hat, &plain4.effect.beta2hat)
    );
    println!(
        "max |ruv3 - ruv2| = {:.2e}",
        max_diff(&r3.effect.beta2hat, &plain2.effect.beta2hat)
    );
    Ok(())
}
