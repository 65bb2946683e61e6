//! Scoring of fitted effects against a simulated truth: ranking AUC,
//! interval coverage, miscalibration proportions, bootstrap intervals and a
//! Kolmogorov-Smirnov uniformity test for p-values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::median;
use crate::error::{Result, RuvError};
use crate::model::{EffectResult, Intervals};
use crate::simulation::SimTruth;

/// Coverage below this counts as anti-conservative.
pub const COVERAGE_LOW: f64 = 0.90;
/// Coverage above this counts as conservative.
pub const COVERAGE_HIGH: f64 = 0.975;

/// Area under the ROC curve of `scores` (higher = more significant) for
/// separating `positive` from the rest; tied pairs count one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(RuvError::shape("scores and labels differ in length"));
    }
    let n_pos = positive.iter().filter(|&&b| b).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RuvError::DegenerateTruth(format!(
            "need both classes, got {n_pos} non-null and {n_neg} null"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RuvError::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            if positive[idx] {
                rank_sum += midrank;
            }
        }
        start = end + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Fraction of intervals `[lower, upper]` containing `truth`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    if lower.len() != truth.len() || upper.len() != truth.len() {
        return Err(RuvError::shape(
            "interval bounds and truth differ in length",
        ));
    }
    if truth.is_empty() {
        return Err(RuvError::invalid("no intervals to score"));
    }
    let hits = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Proportions of replicate coverages below [`COVERAGE_LOW`] and above
/// [`COVERAGE_HIGH`].
pub fn loss_proportions(coverages: &[f64]) -> Result<(f64, f64)> {
    if coverages.is_empty() {
        return Err(RuvError::invalid("no replicates"));
    }
    let n = coverages.len() as f64;
    let low = coverages.iter().filter(|c| **c < COVERAGE_LOW).count() as f64 / n;
    let high = coverages.iter().filter(|c| **c > COVERAGE_HIGH).count() as f64 / n;
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Median,
}

impl Statistic {
    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Statistic::Mean => v.iter().sum::<f64>() / v.len() as f64,
            Statistic::Median => median(v),
        }
    }
}

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_BOOTSTRAP_REPS: usize = 10_000;

pub fn bootstrap_ci(
    values: &[f64],
    stat: Statistic,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if values.is_empty() || reps == 0 {
        return Err(RuvError::invalid("bootstrap needs values and replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(RuvError::invalid(format!("level {level} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut sample = vec![0.0; n];
    let mut boots: Vec<f64> = (0..reps)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = values[rng.random_range(0..n)];
            }
            stat.apply(&sample)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        estimate: stat.apply(values),
        lower: crate::factor::quantile_sorted(&boots, tail),
        upper: crate::factor::quantile_sorted(&boots, 1.0 - tail),
    })
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1). Returns the
/// statistic and its asymptotic p-value (with the usual small-sample
/// correction of the scaling factor).
pub fn ks_uniform(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(RuvError::invalid("no values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok((d, kolmogorov_survival(lambda)))
}

fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// How genes are ranked for AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankScore {
    AbsT,
    /// `1 - lfsr`, for sample-based posterior summaries.
    LfsrComplement,
}

/// Ranking scores for covariate row `row` of an effect result.
pub fn significance_scores(e: &EffectResult, row: usize, score: RankScore) -> Result<Vec<f64>> {
    match score {
        RankScore::AbsT => Ok(e.tstat.row(row).iter().map(|t| t.abs()).collect()),
        RankScore::LfsrComplement => {
            let l = e
                .lfsr
                .as_ref()
                .ok_or_else(|| RuvError::invalid("effect result carries no lfsr"))?;
            Ok(l.row(row).iter().map(|v| 1.0 - v).collect())
        }
    }
}

/// AUC and 95% interval coverage of covariate row 0 over the genes reported
/// in `e`.
pub fn score_effect(
    e: &EffectResult,
    truth: &SimTruth,
    score: RankScore,
) -> Result<(Option<f64>, f64)> {
    let flags = truth.is_nonnull();
    let effects = truth.effect_vector();
    let labels: Vec<bool> = e.columns.iter().map(|&j| flags[j]).collect();
    let scores = significance_scores(e, 0, score)?;
    let a = match auc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(RuvError::DegenerateTruth(_)) => None,
        Err(err) => return Err(err),
    };
    let Intervals { lower, upper, .. } = e.confidence_intervals(0.95);
    let t: Vec<f64> = e.columns.iter().map(|&j| effects[j]).collect();
    let lo: Vec<f64> = lower.row(0).iter().copied().collect();
    let hi: Vec<f64> = upper.row(0).iter().copied().collect();
    Ok((a, coverage(&lo, &hi, &t)?))
}

/// Scenario key of a score row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioKey {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub pi0: f64,
}

/// Score of one method on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: String,
    pub scenario: ScenarioKey,
    pub replicate: usize,
    /// `None` when the replicate has no non-null genes.
    pub auc: Option<f64>,
    pub coverage: f64,
}

pub const SCORE_HEADER: &str = "method\tn\tp\tm\tpi0\treplicate\tauc\tcoverage";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ScoreRow {
    pub fn to_tsv(&self) -> String {
        let s = &self.scenario;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.method,
            s.n,
            s.p,
            s.m,
            s.pi0,
            self.replicate,
            fmt_opt(self.auc),
            self.coverage
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(RuvError::invalid(format!(
                "score row has {} fields",
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| RuvError::invalid(format!("bad number `{s}`")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| RuvError::invalid(format!("bad integer `{s}`")))
        };
        Ok(Self {
            method: f[0].to_string(),
            scenario: ScenarioKey {
                n: int(f[1])?,
                p: int(f[2])?,
                m: int(f[3])?,
                pi0: num(f[4])?,
            },
            replicate: int(f[5])?,
            auc: if f[6] == "NA" { None } else { Some(num(f[6])?) },
            coverage: num(f[7])?,
        })
    }
}

/// Per method and scenario: replicate count, mean AUC with bootstrap CI,
/// median coverage with bootstrap CI and the two loss proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub scenario: ScenarioKey,
    pub replicates: usize,
    pub mean_auc: Option<BootstrapCi>,
    pub median_coverage: BootstrapCi,
    pub prop_cov_low: f64,
    pub prop_cov_high: f64,
}

pub const SUMMARY_HEADER: &str = "method\tn\tp\tm\tpi0\treplicates\tmean_auc\tmean_auc_lower\tmean_auc_upper\tmedian_coverage\tmedian_coverage_lower\tmedian_coverage_upper\tprop_cov_low\tprop_cov_high";

impl SummaryRow {
    pub fn to_tsv(&self) -> String {
        let s = &self.scenario;
        let a = self.mean_auc;
        let c = self.median_coverage;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.method,
            s.n,
            s.p,
            s.m,
            s.pi0,
            self.replicates,
            fmt_opt(a.map(|x| x.estimate)),
            fmt_opt(a.map(|x| x.lower)),
            fmt_opt(a.map(|x| x.upper)),
            c.estimate,
            c.lower,
            c.upper,
            self.prop_cov_low,
            self.prop_cov_high
        )
    }
}

/// Groups rows by method and scenario (in sorted order) and summarises them.
pub fn summarize_scores(rows: &[ScoreRow], reps: usize, seed: u64) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(String, String), Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        let s = &r.scenario;
        let key = format!("{:08}\t{:08}\t{:08}\t{}", s.n, s.p, s.m, s.pi0);
        groups.entry((key, r.method.clone())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let aucs: Vec<f64> = g.iter().filter_map(|r| r.auc).collect();
            let covs: Vec<f64> = g.iter().map(|r| r.coverage).collect();
            let (low, high) = loss_proportions(&covs)?;
            Ok(SummaryRow {
                method: g[0].method.clone(),
                scenario: g[0].scenario,
                replicates: g.len(),
                mean_auc: if aucs.is_empty() {
                    None
                } else {
                    Some(bootstrap_ci(&aucs, Statistic::Mean, reps, 0.95, seed)?)
                },
                median_coverage: bootstrap_ci(&covs, Statistic::Median, reps, 0.95, seed)?,
                prop_cov_low: low,
                prop_cov_high: high,
            })
        })
        .collect()
}

/// Renders rows with a header line.
pub fn render_table<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut out = String::new();
    writeln!(out, "{header}").expect("writing to a string");
    for r in rows {
        writeln!(out, "{}", line(r)).expect("writing to a string");
    }
    out
}
