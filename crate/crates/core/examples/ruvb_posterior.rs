//! Bayesian imputation of the unobserved block, then the three ways of
//! summarising the draws and a split R-hat over independent chains.
//!
//! cargo run --release --example ruvb_posterior

use ruvstar::rotate;
use ruvstar::ruvb::{
    lfsr, posterior_mean, run_ruvb, run_ruvb_chains, split_rhat, summarize_effects, BfaHyper,
    Likelihood, McmcConfig,
};
use ruvstar::simulation::{make_dataset, Scenario};

fn main() -> ruvstar::Result<()> {
    let scenario = Scenario {
        n: 10,
        p: 200,
        m: 30,
        ..Scenario::default()
    };
    let ds = make_dataset(&scenario, 21)?;
    let rm = rotate(&ds.y, &ds.design)?;
    let cfg = McmcConfig {
        iters: 3000,
        burnin: 1000,
        thin: 10,
        seed: 21,
    };
    let hyper = BfaHyper::default();
    let draws = run_ruvb(&rm, 2, &hyper, &cfg)?;
    println!("{} draws for {} genes", draws.t(), draws.columns().len());

    let mean = posterior_mean(&draws);
    let signs = lfsr(&draws);
    let truth = ds.truth.effect_vector();
    println!("gene\ttruth\tmean\tlfsr");
    for (jj, &j) in draws.columns().iter().take(8).enumerate() {
        println!(
            "{j}\t{:.3}\t{:.3}\t{:.3}",
            truth[j],
            mean[(0, jj)],
            signs.lfsr[(0, jj)]
        );
    }
    println!(
        "{} entries fell back to the normal approximation",
        signs.approximated.len()
    );

    for lik in [Likelihood::Sample, Likelihood::Normal, Likelihood::T] {
        let e = summarize_effects(&draws, lik, false)?;
        let ci = e.confidence_intervals(0.95);
        let width = (&ci.upper - &ci.lower).mean();
        println!("{lik:?}: mean interval width {width:.3}, dof {}", e.dof[0]);
    }

    let chains = run_ruvb_chains(&rm, 2, &hyper, &cfg, 4)?;
    let rhat = split_rhat(&chains)?;
    println!("split R-hat: max {:.3}", rhat.max());
    Ok(())
}
