//! Choosing the number of hidden factors by permutation parallel analysis.
//!
//! cargo run --release --example parallel_analysis

use ruvstar::factor::estimate_num_factors;
use ruvstar::simulation::generate_null_counts;

fn main() -> ruvstar::Result<()> {
    println!("planted\testimated");
    for q in 0..=4 {
        let y = generate_null_counts(20, 800, q, 100 + q as u64)?.log2_responses()?;
        let est = estimate_num_factors(y.values(), 20, 7)?;
        println!("{q}\t{est}");
    }
    Ok(())
}
