//! Synthetic counts with known truth: null counts, group labels, binomial
//! thinning, then scoring one fit and bootstrapping a summary.
//!
//! cargo run --release --example simulate_and_score

use ruvstar::evaluation::{bootstrap_ci, ks_uniform, score_effect, RankScore, Statistic};
use ruvstar::simulation::{
    balanced_groups, generate_null_counts, make_dataset, thin_signal, Scenario, SignalSpec,
};
use ruvstar::{model, rotate};

fn main() -> ruvstar::Result<()> {
    let z = generate_null_counts(8, 5, 1, 1)?;
    let g = balanced_groups(8, 2)?;
    let (w, truth) = thin_signal(
        &z,
        &SignalSpec {
            pi0: 0.4,
            effect_sd: 1.0,
            seed: 3,
        },
        &g,
    )?;
    println!("groups {g:?}");
    println!(
        "non-null genes {:?} with log2 effects {:.2?}",
        truth.nonnull, truth.effects
    );
    println!("before\n{}after\n{}", z.counts(), w.counts());

    // OLS on all-null data: p-values should look uniform.
    let null = make_dataset(
        &Scenario {
            pi0: 1.0,
            q_latent: 0,
            ..Scenario::default()
        },
        5,
    )?;
    let ols = model::ols_effects(&rotate(&null.y, &null.design)?)?;
    let pvals: Vec<f64> = ols.p_values().row(0).iter().copied().collect();
    let (d, pval) = ks_uniform(&pvals)?;
    println!("null OLS p-values: KS D = {d:.3}, p = {pval:.3}");

    let mut covs = Vec::new();
    for seed in 0..20 {
        let ds = make_dataset(
            &Scenario {
                n: 10,
                p: 300,
                m: 30,
                ..Scenario::default()
            },
            seed,
        )?;
        let e = model::ols_effects(&rotate(&ds.y, &ds.design)?)?;
        covs.push(score_effect(&e, &ds.truth, RankScore::AbsT)?.1);
    }
    let ci = bootstrap_ci(&covs, Statistic::Median, 1000, 0.95, 9)?;
    println!(
        "median OLS coverage {:.3} [{:.3}, {:.3}]",
        ci.estimate, ci.lower, ci.upper
    );
    Ok(())
}
