//! The `ruvstar` command line driven in-process: simulate, fit, inspect the
//! draws and score, all through TSV files in a temporary directory.
//!
//! cargo run --release --example command_line

use std::fs;

fn run(args: &[&str]) -> i32 {
    let code = ruvstar::cli::run(std::iter::once("ruvstar").chain(args.iter().copied()));
    println!("$ ruvstar {} -> exit {code}", args.join(" "));
    code
}

fn main() -> std::io::Result<()> {
    let dir = tempfile::tempdir()?;
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let data = d("data");
    run(&[
        "simulate",
        "--n",
        "10",
        "--p",
        "200",
        "--m",
        "20",
        "--seed",
        "4",
        "--out-dir",
        &data,
    ]);
    let (y, x, c) = (
        format!("{data}/y.tsv"),
        format!("{data}/x.tsv"),
        format!("{data}/controls.txt"),
    );

    let (fx, report) = (d("ruv3.tsv"), d("ruv3-report.tsv"));
    run(&[
        "fit",
        "--y",
        &y,
        "--x",
        &x,
        "--controls",
        &c,
        "--method",
        "ruv3-la-c",
        "--out",
        &fx,
        "--report",
        &report,
    ]);
    print!("{}", fs::read_to_string(&report)?);
    for line in fs::read_to_string(&fx)?.lines().take(4) {
        println!("{line}");
    }

    let (fb, draws) = (d("ruvb.tsv"), d("ruvb.draws"));
    run(&[
        "fit",
        "--y",
        &y,
        "--x",
        &x,
        "--controls",
        &c,
        "--method",
        "ruvb",
        "--q",
        "2",
        "--iters",
        "2000",
        "--burnin",
        "500",
        "--thin",
        "5",
        "--out",
        &fb,
        "--draws",
        &draws,
    ]);
    let summary = d("draws.tsv");
    run(&["inspect-draws", "--draws", &draws, "--out", &summary]);
    for line in fs::read_to_string(&summary)?.lines().take(3) {
        println!("{line}");
    }

    let truth = format!("{data}/truth.tsv");
    let scores = d("scores.tsv");
    run(&[
        "evaluate",
        "--effects",
        &fx,
        "--truth",
        &truth,
        "--label",
        "ruv3-la-c",
        "--out",
        &scores,
    ]);
    print!("{}", fs::read_to_string(&scores)?);

    // Input problems exit with 2, model problems with 3.
    run(&[
        "fit",
        "--y",
        &y,
        "--x",
        &x,
        "--controls",
        &c,
        "--method",
        "ruv9",
    ]);
    run(&[
        "fit",
        "--y",
        &y,
        "--x",
        &x,
        "--controls",
        &c,
        "--method",
        "ruv2",
        "--q",
        "25",
    ]);
    Ok(())
}
