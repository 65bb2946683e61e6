//! Method tags name a family plus calibration and moderation modifiers;
//! `fit_method` runs the whole pipeline for a tag.
//!
//! cargo run --release --example method_tags

use ruvstar::evaluation::score_effect;
use ruvstar::method::{FactorCount, FitConfig};
use ruvstar::ruvb::McmcConfig;
use ruvstar::simulation::{make_dataset, Scenario};
use ruvstar::{fit_method, MethodSpec};

fn main() -> ruvstar::Result<()> {
    for tag in ["OLS-o", "ruv3-l", "cate-c-lb", "ruvb-l-n"] {
        let spec: MethodSpec = tag.parse()?;
        println!("{tag} -> {spec}");
    }
    if let Err(e) = "ruvb-c".parse::<MethodSpec>() {
        println!("rejected: {e}");
    }

    let ds = make_dataset(
        &Scenario {
            n: 10,
            p: 400,
            m: 40,
            ..Scenario::default()
        },
        2,
    )?;
    let cfg = FitConfig {
        q: FactorCount::Auto {
            n_perms: 20,
            seed: 2,
        },
        mcmc: McmcConfig {
            iters: 2000,
            burnin: 500,
            thin: 5,
            seed: 2,
        },
        ..FitConfig::default()
    };
    println!("method\tq\tauc\tcoverage\treports");
    for tag in ["ols", "ruv2-m", "ruv3-la-c", "cate-lb", "ruv4-l", "ruvb-n"] {
        let spec: MethodSpec = tag.parse()?;
        let out = fit_method(&ds.y, &ds.design, &spec, &cfg)?;
        let (auc, cov) = score_effect(&out.effect, &ds.truth, spec.rank_score())?;
        let labels: Vec<_> = out.reports.iter().map(|r| r.method.label()).collect();
        println!(
            "{spec}\t{}\t{:.3}\t{:.3}\t{}",
            out.q,
            auc.unwrap_or(f64::NAN),
            cov,
            labels.join(",")
        );
    }
    Ok(())
}
