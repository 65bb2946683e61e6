//! Every estimator on one simulated dataset with hidden factors, scored
//! against the known truth.
//!
//! cargo run --release --example ruv_family

use ruvstar::evaluation::{score_effect, RankScore};
use ruvstar::factor::estimate_num_factors;
use ruvstar::simulation::{make_dataset, Scenario};
use ruvstar::{model, rotate, ruv2, ruv2_old, ruv3, ruv4, EffectResult, Ruv4Mode, TruncatedSvd};

fn main() -> ruvstar::Result<()> {
    let scenario = Scenario {
        n: 20,
        p: 1000,
        q_latent: 3,
        m: 100,
        pi0: 0.9,
        ..Scenario::default()
    };
    let ds = make_dataset(&scenario, 11)?;
    let rm = rotate(&ds.y, &ds.design)?;
    let q = estimate_num_factors(&rm.y3, 20, 11)?.max(1);
    println!(
        "{} samples, {} genes, {} controls, q = {q}",
        rm.n(),
        rm.p(),
        rm.controls().m()
    );

    let fa = TruncatedSvd::new();
    let fits: Vec<(&str, EffectResult)> = vec![
        ("ols", model::ols_effects(&rm)?),
        ("ruv2", ruv2(&rm, &fa, q)?.effect),
        ("ruv2old", ruv2_old(&ds.y, &ds.design, &fa, q)?.effect),
        ("ruv3", ruv3(&rm, &fa, q)?.effect),
        ("ruv4", ruv4(&rm, &fa, q, Ruv4Mode::Ols)?.effect),
        ("cate", ruv4(&rm, &fa, q, Ruv4Mode::Gls)?.effect),
    ];
    println!("method\tauc\tcoverage");
    for (name, e) in &fits {
        let (auc, cov) = score_effect(e, &ds.truth, RankScore::AbsT)?;
        println!("{name}\t{:.3}\t{:.3}", auc.unwrap_or(f64::NAN), cov);
    }
    Ok(())
}
