//! Control-gene and MAD calibration of RUV4 standard errors, variance
//! moderation by EBVM, and the variance-inflation MLE.
//!
//! cargo run --release --example variance_calibration

use ruvstar::calibration::{control_calibrate, ebvm, ebvm_effects, lambda_mle, mad_calibrate};
use ruvstar::evaluation::{score_effect, RankScore};
use ruvstar::simulation::{make_dataset, Scenario};
use ruvstar::{rotate, ruv4, Ruv4Mode, TruncatedSvd};

fn main() -> ruvstar::Result<()> {
    let scenario = Scenario {
        n: 6,
        p: 1000,
        m: 100,
        pi0: 0.9,
        ..Scenario::default()
    };
    let ds = make_dataset(&scenario, 8)?;
    let rm = rotate(&ds.y, &ds.design)?;
    let fit = ruv4(&rm, &TruncatedSvd::new(), 2, Ruv4Mode::Gls)?;

    let (ctl, ctl_report) = control_calibrate(&fit.effect, &fit.control_effect)?;
    let (mad, mad_report) = mad_calibrate(&fit.effect)?;
    let (mod_e, mod_report) = ebvm_effects(&fit.effect)?;
    println!("control lambda {:.3}", ctl_report.lambda[0]);
    println!(
        "MAD lambda {:.3} (center {:.3})",
        mad_report.lambda[0],
        mad_report.center.unwrap()[0]
    );
    if let Some(r) = mod_report {
        println!(
            "EBVM prior s0^2 {:.4}, d0 {:.2}",
            r.lambda[0],
            r.prior_dof.unwrap()
        );
    }

    println!("variant\tcoverage");
    for (name, e) in [
        ("raw", &fit.effect),
        ("control", &ctl),
        ("mad", &mad),
        ("ebvm", &mod_e),
    ] {
        let (_, cov) = score_effect(e, &ds.truth, RankScore::AbsT)?;
        println!("{name}\t{cov:.3}");
    }

    let mle = lambda_mle(
        &rm.y2_controls(),
        &fit.z2hat,
        &fit.alphahat_controls(),
        &fit.sigmahat_controls(),
    )?;
    println!("lambda MLE {:.3} (flagged: {})", mle.lambda, mle.flagged);

    // Moderation shrinks each variance towards the pooled prior scale.
    let out = ebvm(&[0.2, 1.0, 5.0, 0.9, 1.1], &[3.0; 5])?;
    println!(
        "moderated {:?}",
        out.variances
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
    );
    Ok(())
}
