//! QR rotation of a small two-group experiment and the OLS fit on the
//! rotated blocks.
//!
//! cargo run --example rotate_and_ols

use nalgebra::DMatrix;
use ruvstar::{model, Design, ResponseMatrix};

fn main() -> ruvstar::Result<()> {
    let n = 8;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 2) as f64 });
    // Gene j shifts group 1 by j / 2; the first two genes are controls.
    let y = DMatrix::from_fn(n, 6, |i, j| {
        let wobble = ((i * 31 + j * 17) % 7) as f64 / 10.0;
        let shift = if i % 2 == 1 && j >= 2 {
            j as f64 / 2.0
        } else {
            0.0
        };
        3.0 + shift + wobble
    });
    let design = Design::new(x, 1, vec![0, 1])?;
    let rm = model::rotate(&ResponseMatrix::new(y)?, &design)?;

    println!(
        "n = {}, k1 = {}, k2 = {}, residual rows = {}",
        rm.n(),
        rm.k1(),
        rm.k2(),
        rm.residual_rows()
    );
    println!("R22 = {:.4}", rm.r22);
    println!("Y2 (non-controls) = {:.4}", rm.y2_non_controls());

    let ols = model::ols_effects(&rm)?;
    println!("gene\tbeta\tse\tt\tdof");
    for (jj, &j) in ols.columns.iter().enumerate() {
        println!(
            "{j}\t{:.3}\t{:.3}\t{:.2}\t{}",
            ols.beta2hat[(0, jj)],
            ols.se[(0, jj)],
            ols.tstat[(0, jj)],
            ols.dof[jj]
        );
    }
    let ci = ols.confidence_intervals(0.95);
    println!(
        "95% interval for gene {}: [{:.3}, {:.3}]",
        ols.columns[0],
        ci.lower[(0, 0)],
        ci.upper[(0, 0)]
    );
    Ok(())
}
