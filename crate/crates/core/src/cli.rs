//! Command-line front end: `fit`, `simulate`, `evaluate`, `bench` and
//! `inspect-draws`.
//!
//! Exit codes: 0 on success, 2 for malformed input or usage, 3 when the model
//! fails on well-formed input. `RUVSTAR_THREADS` caps the worker pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::RuvError;
use crate::evaluation::{self, ScenarioKey, ScoreRow};
use crate::factor::derive_seed;
use crate::io::{self, LabeledMatrix};
use crate::method::{self, FactorCount, FitConfig, MethodSpec};
use crate::model::{Design, ResponseMatrix};
use crate::ruvb::{self, BfaHyper, McmcConfig};
use crate::simulation::{self, NullModel, Scenario};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ruvstar",
    version,
    about = "Remove unwanted variation using negative control genes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one method to a response matrix and design.
    Fit(FitArgs),
    /// Write a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Score an effects table against a truth table.
    Evaluate(EvaluateArgs),
    /// Run a resumable factorial simulation study.
    Bench(BenchArgs),
    /// Summarise a binary posterior-draw file.
    InspectDraws(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct McmcArgs {
    #[arg(long, default_value_t = 12_500)]
    pub iters: usize,
    #[arg(long, default_value_t = 2_500)]
    pub burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Responses: samples in rows, header row of gene ids.
    #[arg(long)]
    pub y: PathBuf,
    /// Design: samples in rows, header row of covariate names.
    #[arg(long)]
    pub x: PathBuf,
    /// Control gene ids, one per line.
    #[arg(long)]
    pub controls: PathBuf,
    /// Method tag, e.g. `ruv3-la`, `cate-c` or `ruvb-nn`.
    #[arg(long)]
    pub method: String,
    /// Number of leading nuisance columns of the design.
    #[arg(long, default_value_t = 1)]
    pub k1: usize,
    /// Number of factors, or `auto` for parallel analysis.
    #[arg(long, default_value = "auto")]
    pub q: String,
    #[arg(long, default_value_t = 20)]
    pub n_perms: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Effects table; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Calibration report table.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Binary posterior draws (`ruvb` only).
    #[arg(long)]
    pub draws: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NullModelArgs {
    #[arg(long, default_value_t = NullModel::default().median_count)]
    pub median_count: f64,
    #[arg(long, default_value_t = NullModel::default().log_mean_sd)]
    pub log_mean_sd: f64,
    #[arg(long, default_value_t = NullModel::default().factor_sd)]
    pub factor_sd: f64,
}

impl NullModelArgs {
    fn model(&self) -> NullModel {
        NullModel {
            median_count: self.median_count,
            log_mean_sd: self.log_mean_sd,
            factor_sd: self.factor_sd,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub p: usize,
    #[arg(long, default_value_t = 3)]
    pub q_latent: usize,
    /// Number of control genes.
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub pi0: f64,
    #[arg(long, default_value_t = 0.8)]
    pub effect_sd: f64,
    #[command(flatten)]
    pub null_model: NullModelArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Receives counts.tsv, y.tsv, x.tsv, controls.txt and truth.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    /// Absolute t-statistic.
    AbsT,
    /// One minus the lfsr column.
    Lfsr,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Coefficient to score; the first one in the table if omitted.
    #[arg(long)]
    pub coef: Option<String>,
    #[arg(long, value_enum, default_value_t = ScoreArg::AbsT)]
    pub score: ScoreArg,
    /// Label for the output row.
    #[arg(long, default_value = "NA")]
    pub label: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Progress file; created if missing and resumed otherwise.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Final per-replicate score table.
    #[arg(long)]
    pub out: PathBuf,
    /// Final summary table.
    #[arg(long)]
    pub summary: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [6usize, 10, 20])]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.9])]
    pub pi0s: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50])]
    pub ms: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = ["ols-l".to_string(), "ruv2-l".into(), "ruv3-la".into(), "cate-la".into(), "ruvb-nn".into()]
    )]
    pub methods: Vec<String>,
    /// Replicates per (n, pi0, m) cell.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub p: usize,
    #[arg(long, default_value_t = 3)]
    pub q_latent: usize,
    #[arg(long, default_value_t = 0.8)]
    pub effect_sd: f64,
    #[command(flatten)]
    pub null_model: NullModelArgs,
    #[arg(long, default_value = "auto")]
    pub q: String,
    #[arg(long, default_value_t = 20)]
    pub n_perms: usize,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[arg(long, default_value_t = evaluation::DEFAULT_BOOTSTRAP_REPS)]
    pub bootstrap_reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stop after this many datasets in this invocation.
    #[arg(long)]
    pub max_cells: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Model(_) => EXIT_MODEL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Model(m) => write!(f, "model error: {m}"),
        }
    }
}

impl From<RuvError> for CliError {
    fn from(e: RuvError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Model(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Parses arguments, runs the command and returns the exit code. Diagnostics
/// go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match with_thread_cap(|| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ruvstar: {e}");
            e.exit_code()
        }
    }
}

fn with_thread_cap(f: impl FnOnce() -> CliResult<()> + Send) -> CliResult<()> {
    let Ok(raw) = std::env::var("RUVSTAR_THREADS") else {
        return f();
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        input(format!(
            "RUVSTAR_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Model(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::InspectDraws(a) => cmd_inspect(a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| input(format!("cannot write to stdout: {e}"))),
    }
}

fn parse_q(q: &str, n_perms: usize, seed: u64) -> CliResult<FactorCount> {
    if q == "auto" {
        return Ok(FactorCount::Auto { n_perms, seed });
    }
    q.parse().map(FactorCount::Fixed).map_err(|_| {
        input(format!(
            "--q must be a non-negative integer or `auto`, got `{q}`"
        ))
    })
}

fn mcmc_config(a: &McmcArgs, seed: u64) -> CliResult<McmcConfig> {
    let c = McmcConfig {
        iters: a.iters,
        burnin: a.burnin,
        thin: a.thin,
        seed,
    };
    c.validate()?;
    Ok(c)
}

/// Stream key of a gene id, so that RUVB draws do not depend on column order.
pub fn gene_key(id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let spec: MethodSpec = a.method.parse()?;
    let y = LabeledMatrix::from_tsv(&read_text(&a.y)?)
        .map_err(|e| input(format!("{}: {e}", a.y.display())))?;
    let x = LabeledMatrix::from_tsv(&read_text(&a.x)?)
        .map_err(|e| input(format!("{}: {e}", a.x.display())))?;
    if y.rows != x.rows {
        return Err(input("sample ids of the responses and design differ"));
    }
    let ids = io::parse_id_list(&read_text(&a.controls)?);
    let controls = io::resolve_ids(&ids, &y.cols)?;
    if a.draws.is_some() && spec.family != method::Family::Ruvb {
        return Err(input("--draws is only available for ruvb"));
    }
    if a.k1 >= x.cols.len() {
        return Err(input(format!(
            "--k1 {} leaves no covariate of interest among {} columns",
            a.k1,
            x.cols.len()
        )));
    }
    let design = Design::new(x.values.clone(), a.k1, controls)?;
    let resp = ResponseMatrix::new(y.values.clone())?;
    let cfg = FitConfig {
        q: parse_q(&a.q, a.n_perms, a.seed)?,
        mcmc: mcmc_config(&a.mcmc, a.seed)?,
        hyper: BfaHyper::default(),
        gene_keys: Some(y.cols.iter().map(|g| gene_key(g)).collect()),
    };
    let out = method::fit_method(&resp, &design, &spec, &cfg)?;
    let coefs = &x.cols[a.k1..];
    emit(
        a.out.as_deref(),
        &io::effects_to_tsv(&out.effect, &y.cols, coefs)?,
    )?;
    if let Some(path) = &a.report {
        write_file(path, io::reports_to_tsv(&out.reports, coefs).as_bytes())?;
    }
    if let (Some(path), Some(d)) = (&a.draws, &out.draws) {
        let names: Vec<String> = d.columns().iter().map(|&j| y.cols[j].clone()).collect();
        let mut buf = Vec::new();
        io::write_draws(&mut buf, d, &names)?;
        write_file(path, &buf)?;
    }
    Ok(())
}

fn gene_ids(p: usize) -> Vec<String> {
    let w = p.to_string().len();
    (1..=p).map(|j| format!("gene{j:0w$}")).collect()
}

fn sample_ids(n: usize) -> Vec<String> {
    let w = n.to_string().len();
    (1..=n).map(|i| format!("sample{i:0w$}")).collect()
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let sc = Scenario {
        n: a.n,
        p: a.p,
        q_latent: a.q_latent,
        m: a.m,
        pi0: a.pi0,
        effect_sd: a.effect_sd,
        null_model: a.null_model.model(),
    };
    let ds = simulation::make_dataset(&sc, a.seed)?;
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| input(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let genes = gene_ids(a.p);
    let samples = sample_ids(a.n);
    let counts = ds.counts.counts().map(|c| c as f64);
    let tables = [
        (
            "counts.tsv",
            LabeledMatrix::new(samples.clone(), genes.clone(), counts)?,
        ),
        (
            "y.tsv",
            LabeledMatrix::new(samples.clone(), genes.clone(), ds.y.values().clone())?,
        ),
        (
            "x.tsv",
            LabeledMatrix::new(
                samples,
                vec!["intercept".into(), "group".into()],
                ds.design.x().clone(),
            )?,
        ),
    ];
    for (name, t) in tables {
        write_file(&a.out_dir.join(name), t.to_tsv().as_bytes())?;
    }
    let mut controls = String::new();
    for &j in ds.design.controls() {
        writeln!(controls, "{}", genes[j]).expect("writing to a string");
    }
    write_file(&a.out_dir.join("controls.txt"), controls.as_bytes())?;
    write_file(
        &a.out_dir.join("truth.tsv"),
        io::truth_to_tsv(&ds.truth, &genes).as_bytes(),
    )?;
    Ok(())
}

pub const EVALUATE_HEADER: &str = "label\tcoef\tgenes\tauc\tcoverage";

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let rows = io::effects_from_tsv(&read_text(&a.effects)?)
        .map_err(|e| input(format!("{}: {e}", a.effects.display())))?;
    let truth = io::truth_from_tsv(&read_text(&a.truth)?)
        .map_err(|e| input(format!("{}: {e}", a.truth.display())))?;
    let truth: BTreeMap<&str, (bool, f64)> = truth
        .iter()
        .map(|(g, f, v)| (g.as_str(), (*f, *v)))
        .collect();
    let coef = match &a.coef {
        Some(c) => c.clone(),
        None => rows
            .first()
            .map(|r| r.coef.clone())
            .ok_or_else(|| input("effects table is empty"))?,
    };
    let (mut scores, mut labels, mut lo, mut hi, mut truths) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in rows.iter().filter(|r| r.coef == coef) {
        let &(flag, effect) = truth
            .get(r.gene.as_str())
            .ok_or_else(|| input(format!("gene `{}` missing from truth table", r.gene)))?;
        let s = match a.score {
            ScoreArg::AbsT => r.t.abs(),
            ScoreArg::Lfsr if r.lfsr.is_nan() => {
                return Err(input(format!("gene `{}` has no lfsr", r.gene)))
            }
            ScoreArg::Lfsr => 1.0 - r.lfsr,
        };
        scores.push(s);
        labels.push(flag);
        lo.push(r.lower);
        hi.push(r.upper);
        truths.push(effect);
    }
    if scores.is_empty() {
        return Err(input(format!("no rows for coefficient `{coef}`")));
    }
    let auc = evaluation::auc(&scores, &labels)?;
    let cov = evaluation::coverage(&lo, &hi, &truths)?;
    let text = format!(
        "{EVALUATE_HEADER}\n{}\t{coef}\t{}\t{}\t{}\n",
        a.label,
        scores.len(),
        io::fmt_num(auc),
        io::fmt_num(cov)
    );
    emit(a.out.as_deref(), &text)
}

const MANIFEST_MAGIC: &str = "#ruvstar-bench\t1";

/// One simulated dataset of the factorial.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    n: usize,
    pi0: f64,
    m: usize,
    rep: usize,
}

impl Cell {
    fn key(&self) -> (usize, usize, u64, usize) {
        (self.n, self.m, self.pi0.to_bits(), self.rep)
    }

    fn seed(&self, base: u64) -> u64 {
        [
            self.n as u64,
            self.m as u64,
            self.pi0.to_bits(),
            self.rep as u64,
        ]
        .into_iter()
        .fold(base, derive_seed)
    }
}

fn bench_config_lines(a: &BenchArgs, methods: &[MethodSpec]) -> Vec<String> {
    let join = |v: Vec<String>| v.join(",");
    let nm = a.null_model.model();
    let mut kv: BTreeMap<&str, String> = BTreeMap::new();
    kv.insert("ns", join(a.ns.iter().map(|v| v.to_string()).collect()));
    kv.insert("pi0s", join(a.pi0s.iter().map(|v| v.to_string()).collect()));
    kv.insert("ms", join(a.ms.iter().map(|v| v.to_string()).collect()));
    kv.insert(
        "methods",
        join(methods.iter().map(|m| m.to_string()).collect()),
    );
    kv.insert("reps", a.reps.to_string());
    kv.insert("p", a.p.to_string());
    kv.insert("q_latent", a.q_latent.to_string());
    kv.insert("effect_sd", a.effect_sd.to_string());
    kv.insert("median_count", nm.median_count.to_string());
    kv.insert("log_mean_sd", nm.log_mean_sd.to_string());
    kv.insert("factor_sd", nm.factor_sd.to_string());
    kv.insert("q", a.q.clone());
    kv.insert("n_perms", a.n_perms.to_string());
    kv.insert("iters", a.mcmc.iters.to_string());
    kv.insert("burnin", a.mcmc.burnin.to_string());
    kv.insert("thin", a.mcmc.thin.to_string());
    kv.insert("bootstrap_reps", a.bootstrap_reps.to_string());
    kv.insert("seed", a.seed.to_string());
    kv.into_iter()
        .map(|(k, v)| format!("#config\t{k}\t{v}"))
        .collect()
}

fn run_cell(a: &BenchArgs, methods: &[MethodSpec], cell: Cell) -> CliResult<Vec<ScoreRow>> {
    let sc = Scenario {
        n: cell.n,
        p: a.p,
        q_latent: a.q_latent,
        m: cell.m,
        pi0: cell.pi0,
        effect_sd: a.effect_sd,
        null_model: a.null_model.model(),
    };
    let seed = cell.seed(a.seed);
    let ds = simulation::make_dataset(&sc, seed)?;
    let fit_seed = derive_seed(seed, 100);
    let cfg = FitConfig {
        q: parse_q(&a.q, a.n_perms, fit_seed)?,
        mcmc: mcmc_config(&a.mcmc, fit_seed)?,
        hyper: BfaHyper::default(),
        gene_keys: None,
    };
    let key = ScenarioKey {
        n: cell.n,
        p: a.p,
        m: cell.m,
        pi0: cell.pi0,
    };
    methods
        .iter()
        .map(|spec| {
            let out = method::fit_method(&ds.y, &ds.design, spec, &cfg)?;
            let (auc, coverage) =
                evaluation::score_effect(&out.effect, &ds.truth, spec.rank_score())?;
            Ok(ScoreRow {
                method: spec.to_string(),
                scenario: key,
                replicate: cell.rep,
                auc,
                coverage,
            })
        })
        .collect()
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let methods: Vec<MethodSpec> = a
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_, RuvError>>()?;
    if a.ns.is_empty() || a.pi0s.is_empty() || a.ms.is_empty() || methods.is_empty() || a.reps == 0
    {
        return Err(input(
            "bench needs at least one n, pi0, m, method and replicate",
        ));
    }
    parse_q(&a.q, a.n_perms, 0)?;
    mcmc_config(&a.mcmc, 0)?;
    let mut cells = Vec::new();
    for &n in &a.ns {
        for &pi0 in &a.pi0s {
            for &m in &a.ms {
                for rep in 0..a.reps {
                    cells.push(Cell { n, pi0, m, rep });
                }
            }
        }
    }
    let config = bench_config_lines(a, &methods);
    let mut done: Vec<ScoreRow> = Vec::new();
    if a.manifest.exists() {
        let text = read_text(&a.manifest)?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(input(format!(
                "{} is not a bench manifest",
                a.manifest.display()
            )));
        }
        let recorded: Vec<&str> = lines
            .clone()
            .take_while(|l| l.starts_with("#config"))
            .collect();
        if recorded != config.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(input("manifest was written with a different configuration"));
        }
        for line in lines.skip(recorded.len() + 1) {
            // A torn final line from an interrupted append is dropped.
            if let Ok(r) = ScoreRow::from_tsv(line) {
                done.push(r);
            }
        }
    }
    // Keep only cells with a row for every method.
    let mut per_cell: BTreeMap<(usize, usize, u64, usize), BTreeSet<String>> = BTreeMap::new();
    for r in &done {
        let k = (
            r.scenario.n,
            r.scenario.m,
            r.scenario.pi0.to_bits(),
            r.replicate,
        );
        per_cell.entry(k).or_default().insert(r.method.clone());
    }
    let complete: BTreeSet<_> = per_cell
        .into_iter()
        .filter(|(_, ms)| ms.len() == methods.len())
        .map(|(k, _)| k)
        .collect();
    done.retain(|r| {
        complete.contains(&(
            r.scenario.n,
            r.scenario.m,
            r.scenario.pi0.to_bits(),
            r.replicate,
        ))
    });
    let mut manifest = format!("{MANIFEST_MAGIC}\n");
    for l in &config {
        manifest.push_str(l);
        manifest.push('\n');
    }
    manifest.push_str(evaluation::SCORE_HEADER);
    manifest.push('\n');
    for r in &done {
        manifest.push_str(&r.to_tsv());
        manifest.push('\n');
    }
    write_file(&a.manifest, manifest.as_bytes())?;

    let pending: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|c| !complete.contains(&c.key()))
        .collect();
    let budget = a.max_cells.unwrap_or(usize::MAX).min(pending.len());
    let mut file = fs::OpenOptions::new()
        .append(true)
        .open(&a.manifest)
        .map_err(|e| input(format!("cannot open {}: {e}", a.manifest.display())))?;
    let batch = rayon::current_num_threads().max(1);
    for chunk in pending[..budget].chunks(batch) {
        let results: Vec<CliResult<Vec<ScoreRow>>> = chunk
            .par_iter()
            .map(|&c| run_cell(a, &methods, c))
            .collect();
        for rows in results {
            let rows = rows?;
            let mut text = String::new();
            for r in &rows {
                text.push_str(&r.to_tsv());
                text.push('\n');
            }
            file.write_all(text.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| input(format!("cannot append to manifest: {e}")))?;
            done.extend(rows);
        }
    }
    let finished = cells.len() - pending.len() + budget;
    if finished < cells.len() {
        eprintln!(
            "bench: {finished} of {} cells complete; rerun to resume",
            cells.len()
        );
        return Ok(());
    }
    done.sort_by(|x, y| {
        let k = |r: &ScoreRow| (r.scenario.n, r.scenario.p, r.scenario.m, r.replicate);
        k(x).cmp(&k(y))
            .then(x.scenario.pi0.total_cmp(&y.scenario.pi0))
            .then_with(|| x.method.cmp(&y.method))
    });
    let scores = evaluation::render_table(evaluation::SCORE_HEADER, &done, ScoreRow::to_tsv);
    write_file(&a.out, scores.as_bytes())?;
    let summary = evaluation::summarize_scores(&done, a.bootstrap_reps, derive_seed(a.seed, 1))?;
    let summary = evaluation::render_table(
        evaluation::SUMMARY_HEADER,
        &summary,
        evaluation::SummaryRow::to_tsv,
    );
    write_file(&a.summary, summary.as_bytes())
}

pub const INSPECT_HEADER: &str = "gene\tcoef\tmean\tsd\tlower\tupper\tlfsr";

fn cmd_inspect(a: &InspectArgs) -> CliResult<()> {
    let bytes =
        fs::read(&a.draws).map_err(|e| input(format!("cannot read {}: {e}", a.draws.display())))?;
    let (d, ids) = io::read_draws(&mut bytes.as_slice())
        .map_err(|e| input(format!("{}: {e}", a.draws.display())))?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(input("--level must lie in (0, 1)"));
    }
    let mean = ruvb::posterior_mean(&d);
    let sd = ruvb::posterior_sd(&d);
    let iv = ruvb::credible_interval(&d, a.level)?;
    let lf = ruvb::lfsr(&d).lfsr;
    let mut out = String::from(INSPECT_HEADER);
    out.push('\n');
    for (jj, id) in ids.iter().enumerate() {
        for i in 0..d.k2() {
            let v = [
                mean[(i, jj)],
                sd[(i, jj)],
                iv.lower[(i, jj)],
                iv.upper[(i, jj)],
                lf[(i, jj)],
            ];
            let cells: Vec<String> = v.iter().map(|x| io::fmt_num(*x)).collect();
            writeln!(out, "{id}\t{}\t{}", i + 1, cells.join("\t")).expect("writing to a string");
        }
    }
    emit(a.out.as_deref(), &out)
}
