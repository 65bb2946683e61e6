//! RUVB: impute the unobserved `Y2` non-control block by Bayesian factor
//! analysis, turn each imputation into a draw
//! `beta2 = R22^{-1}(Y2_nonC - Y2_nonC_imputed)` and summarise the draws.
//!
//! The draws follow the posterior under a flat prior on `beta2`; any other
//! prior density `g` is applied by weighting draw `i` with `g(beta2_i)`.

pub mod sampler;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration;
use crate::error::{Result, RuvError};
use crate::factor::{derive_seed, truncated_svd_fa, FaConfig};
use crate::linalg;
use crate::model::{EffectResult, Intervals, RotatedModel};
pub use sampler::{BfaHyper, BfaState, MissingBlock};

/// Chain length settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iters: 12_500,
            burnin: 2_500,
            thin: 10,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.iters <= self.burnin || self.retained() == 0 {
            return Err(RuvError::invalid(format!(
                "need iters > burnin and thin >= 1 with at least one retained draw: {self:?}"
            )));
        }
        Ok(())
    }

    /// Number of retained draws, `(iters - burnin) / thin`.
    pub fn retained(&self) -> usize {
        (self.iters.saturating_sub(self.burnin)) / self.thin.max(1)
    }
}

/// Posterior draws of `beta2`, stored per coefficient: the `t` draws of
/// entry `(i, j)` are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    columns: Vec<usize>,
    k2: usize,
    t: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    dof: f64,
}

impl PosteriorDraws {
    /// `values[(i * columns.len() + j) * t + s]` is draw `s` of entry `(i, j)`.
    pub fn new(
        columns: Vec<usize>,
        k2: usize,
        t: usize,
        values: Vec<f64>,
        weights: Vec<f64>,
        dof: f64,
    ) -> Result<Self> {
        if t == 0 || values.len() != k2 * columns.len() * t || weights.len() != t {
            return Err(RuvError::shape(format!(
                "{} values and {} weights for k2 = {k2}, {} columns, t = {t}",
                values.len(),
                weights.len(),
                columns.len()
            )));
        }
        check_weights(&weights)?;
        Ok(Self {
            columns,
            k2,
            t,
            values,
            weights,
            dof,
        })
    }

    /// Builds from a list of `k2 x columns` draw matrices with uniform weights.
    pub fn from_draws(columns: Vec<usize>, draws: &[DMatrix<f64>], dof: f64) -> Result<Self> {
        let t = draws.len();
        let k2 = draws.first().map_or(0, |d| d.nrows());
        let ncols = columns.len();
        if draws.iter().any(|d| d.shape() != (k2, ncols)) {
            return Err(RuvError::shape("draws differ in shape"));
        }
        let mut values = vec![0.0; k2 * ncols * t];
        for (s, d) in draws.iter().enumerate() {
            for j in 0..ncols {
                for i in 0..k2 {
                    values[(i * ncols + j) * t + s] = d[(i, j)];
                }
            }
        }
        Self::new(columns, k2, t, values, vec![1.0; t], dof)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Residual degrees of freedom used by the t likelihood.
    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `t` draws of entry `(i, j)`.
    pub fn series(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.columns.len() + j) * self.t;
        &self.values[start..start + self.t]
    }

    /// Draw `s` as a `k2 x columns` matrix.
    pub fn draw(&self, s: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.k2, self.columns.len(), |i, j| self.series(i, j)[s])
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.t {
            return Err(RuvError::shape("one weight per draw is required"));
        }
        check_weights(&weights)?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Weights every draw by a prior density `g` evaluated at the full draw.
    pub fn reweight(&self, g: &dyn Fn(&DMatrix<f64>) -> f64) -> Result<Self> {
        let w = (0..self.t).map(|s| g(&self.draw(s))).collect();
        self.with_weights(w)
    }

    /// Restricts to the given entries of `columns` (positions, not gene ids).
    pub fn select(&self, positions: &[usize]) -> Self {
        let ncols = positions.len();
        let mut values = Vec::with_capacity(self.k2 * ncols * self.t);
        for i in 0..self.k2 {
            for &j in positions {
                values.extend_from_slice(self.series(i, j));
            }
        }
        Self {
            columns: positions.iter().map(|&j| self.columns[j]).collect(),
            values,
            ..self.clone()
        }
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(RuvError::invalid(
            "prior weights must be finite and nonnegative",
        ));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(RuvError::PriorSupport);
    }
    Ok(())
}

/// Initial state and working matrix `[Y2; Y3]` with the missing block filled.
///
/// Factors and loadings come from a truncated SVD of `Y3`, with singular
/// values split evenly and signs fixed so that loading columns have
/// nonnegative sums. `Z2` is the least-squares fit to the control columns
/// of `Y2`. Precisions start at their prior means.
pub fn initial_state(
    rm: &RotatedModel,
    q: usize,
    hyper: &BfaHyper,
) -> Result<(BfaState, DMatrix<f64>, MissingBlock)> {
    hyper.validate()?;
    let (k2, rows, p) = (rm.k2(), rm.residual_rows(), rm.p());
    let cs = rm.controls();
    if q == 0 {
        return Err(RuvError::invalid("number of factors must be at least 1"));
    }
    if rows <= q {
        return Err(RuvError::ZeroDof {
            context: format!("RUVB needs n - k - q > 0, got {} - {q}", rows),
        });
    }
    if cs.m() <= q {
        return Err(RuvError::TooFewControls { m: cs.m(), q });
    }
    let fit = truncated_svd_fa(&rm.y3, q, &FaConfig::default())?;
    let mut l3 = fit.zhat;
    let mut f = fit.alphahat;
    for k in 0..q {
        let d = f.row(k).norm();
        let sign = if l3.column(k).sum() < 0.0 { -1.0 } else { 1.0 };
        l3.column_mut(k).scale_mut(sign * d.sqrt());
        f.row_mut(k).scale_mut(sign / d.sqrt());
    }
    let f_c = linalg::select_columns(&f, cs.controls());
    let l2 = crate::estimators::ols_z2(&rm.y2_controls(), &f_c)?;

    let mut l = DMatrix::zeros(k2 + rows, q);
    l.rows_mut(0, k2).copy_from(&l2);
    l.rows_mut(k2, rows).copy_from(&l3);

    let mut work = rm.y23();
    let fill = &l2 * linalg::select_columns(&f, cs.non_controls());
    for (src, &dst) in cs.non_controls().iter().enumerate() {
        work.view_mut((0, dst), (k2, 1))
            .copy_from(&fill.column(src));
    }

    let state = BfaState {
        l,
        f,
        xi: DVector::from_element(p, hyper.beta0),
        phi: 1.0 / hyper.beta0,
        zeta: DVector::from_element(q, 1.0 / hyper.tau0),
    };
    let block = MissingBlock {
        rows: k2,
        cols: cs.non_controls().to_vec(),
    };
    Ok((state, work, block))
}

/// Runs one chain with gene streams keyed by column index.
pub fn run_ruvb(
    rm: &RotatedModel,
    q: usize,
    hyper: &BfaHyper,
    mcmc: &McmcConfig,
) -> Result<PosteriorDraws> {
    let keys: Vec<u64> = (0..rm.p() as u64).collect();
    run_ruvb_keyed(rm, q, hyper, mcmc, &keys)
}

/// Runs one chain. `keys` identify genes: gene `j` draws its own random
/// numbers from a stream seeded by `(seed, keys[j])`, so relabelling genes
/// together with their keys relabels the output without changing it.
pub fn run_ruvb_keyed(
    rm: &RotatedModel,
    q: usize,
    hyper: &BfaHyper,
    mcmc: &McmcConfig,
    keys: &[u64],
) -> Result<PosteriorDraws> {
    mcmc.validate()?;
    if keys.len() != rm.p() {
        return Err(RuvError::shape("one key per gene is required"));
    }
    let (mut state, mut work, block) = initial_state(rm, q, hyper)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
    let gene_base = derive_seed(mcmc.seed, u64::MAX);
    let mut gene_rngs: Vec<ChaCha8Rng> = keys
        .iter()
        .map(|&k| ChaCha8Rng::seed_from_u64(derive_seed(gene_base, k)))
        .collect();

    let y2nc = rm.y2_non_controls();
    let cols = block.cols.clone();
    let mut draws = Vec::with_capacity(mcmc.retained());
    for it in 0..mcmc.iters {
        sampler::gibbs_step(
            &mut state,
            &mut work,
            &block,
            hyper,
            &mut rng,
            &mut gene_rngs,
        )?;
        if it >= mcmc.burnin && (it + 1 - mcmc.burnin) % mcmc.thin == 0 {
            let imputed = linalg::select_columns(&work.rows(0, rm.k2()).into_owned(), &cols);
            draws.push(rm.r22_solve(&(&y2nc - imputed)));
        }
    }
    let dof = (rm.residual_rows() - q) as f64;
    PosteriorDraws::from_draws(cols, &draws, dof)
}

/// Runs `chains` independent chains in parallel; chain `c` uses seed
/// `derive_seed(mcmc.seed, c)`.
pub fn run_ruvb_chains(
    rm: &RotatedModel,
    q: usize,
    hyper: &BfaHyper,
    mcmc: &McmcConfig,
    chains: usize,
) -> Result<Vec<PosteriorDraws>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let cfg = McmcConfig {
                seed: derive_seed(mcmc.seed, c),
                ..*mcmc
            };
            run_ruvb(rm, q, hyper, &cfg)
        })
        .collect()
}

/// Split-chain potential scale reduction per entry. Each chain is halved
/// and the halves are treated as separate chains.
pub fn split_rhat(chains: &[PosteriorDraws]) -> Result<DMatrix<f64>> {
    let first = chains
        .first()
        .ok_or_else(|| RuvError::invalid("no chains supplied"))?;
    let (k2, ncols, t) = (first.k2, first.columns.len(), first.t);
    if chains
        .iter()
        .any(|c| c.k2 != k2 || c.columns != first.columns || c.t != t)
    {
        return Err(RuvError::shape("chains differ in shape"));
    }
    let half = t / 2;
    if half < 2 {
        return Err(RuvError::invalid("need at least 4 draws per chain"));
    }
    Ok(DMatrix::from_fn(k2, ncols, |i, j| {
        let parts: Vec<&[f64]> = chains
            .iter()
            .flat_map(|c| {
                let s = c.series(i, j);
                [&s[..half], &s[half..2 * half]]
            })
            .collect();
        let nn = half as f64;
        let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / nn).collect();
        let vars: Vec<f64> = parts
            .iter()
            .zip(&means)
            .map(|(p, m)| p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nn - 1.0))
            .collect();
        let k = parts.len() as f64;
        let grand = means.iter().sum::<f64>() / k;
        let b = nn * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
        let w = vars.iter().sum::<f64>() / k;
        if w == 0.0 {
            return 1.0;
        }
        (((nn - 1.0) / nn * w + b / nn) / w).sqrt()
    }))
}

/// Weighted posterior mean of every entry.
pub fn posterior_mean(d: &PosteriorDraws) -> DMatrix<f64> {
    let total: f64 = d.weights.iter().sum();
    DMatrix::from_fn(d.k2, d.columns.len(), |i, j| {
        d.series(i, j)
            .iter()
            .zip(&d.weights)
            .map(|(v, w)| v * w)
            .sum::<f64>()
            / total
    })
}

/// Weighted posterior standard deviation with the reliability-weight
/// correction (the usual `t - 1` denominator under equal weights).
pub fn posterior_sd(d: &PosteriorDraws) -> DMatrix<f64> {
    let w = d.normalized_weights();
    let v2: f64 = w.iter().map(|x| x * x).sum();
    let mean = posterior_mean(d);
    DMatrix::from_fn(d.k2, d.columns.len(), |i, j| {
        if v2 >= 1.0 {
            return 0.0;
        }
        let m = mean[(i, j)];
        let ss: f64 = d
            .series(i, j)
            .iter()
            .zip(&w)
            .map(|(v, w)| w * (v - m).powi(2))
            .sum();
        (ss / (1.0 - v2)).sqrt()
    })
}

/// Equal-tail credible intervals. With draws sorted, the lower end is the
/// largest order statistic `l` whose preceding weight is at most
/// `(1 - level)/2`; the upper end is the smallest `m` whose following
/// weight is at most `(1 - level)/2`.
pub fn credible_interval(d: &PosteriorDraws, level: f64) -> Result<Intervals> {
    if !(level > 0.0 && level < 1.0) {
        return Err(RuvError::invalid(format!("level {level} outside (0, 1)")));
    }
    let tail = (1.0 - level) / 2.0;
    let eps = 1e-12;
    let w = d.normalized_weights();
    let mut lower = DMatrix::zeros(d.k2, d.columns.len());
    let mut upper = lower.clone();
    let mut order: Vec<usize> = (0..d.t).collect();
    for i in 0..d.k2 {
        for j in 0..d.columns.len() {
            let s = d.series(i, j);
            order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
            let mut before = 0.0;
            let mut lo = 0;
            for (pos, &idx) in order.iter().enumerate() {
                if before <= tail + eps {
                    lo = pos;
                } else {
                    break;
                }
                before += w[idx];
            }
            let mut after = 0.0;
            let mut hi = d.t - 1;
            for (pos, &idx) in order.iter().enumerate().rev() {
                if after <= tail + eps {
                    hi = pos;
                } else {
                    break;
                }
                after += w[idx];
            }
            lower[(i, j)] = s[order[lo]];
            upper[(i, j)] = s[order[hi]];
        }
    }
    Ok(Intervals {
        lower,
        upper,
        level,
    })
}

/// Local false sign rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LfsrEstimate {
    /// `min(P(beta < 0), 1 - P(beta < 0))` from the weighted draws.
    pub count_based: DMatrix<f64>,
    /// Equal to `count_based` unless that is zero, in which case the normal
    /// approximation `Phi(-|mean| / sd)` is used.
    pub lfsr: DMatrix<f64>,
    /// Entries where the normal approximation was used.
    pub approximated: Vec<(usize, usize)>,
}

pub fn lfsr(d: &PosteriorDraws) -> LfsrEstimate {
    let w = d.normalized_weights();
    let mean = posterior_mean(d);
    let sd = posterior_sd(d);
    let normal = Normal::standard();
    let mut count_based = DMatrix::zeros(d.k2, d.columns.len());
    let mut out = count_based.clone();
    let mut approximated = Vec::new();
    for i in 0..d.k2 {
        for j in 0..d.columns.len() {
            let p: f64 = d
                .series(i, j)
                .iter()
                .zip(&w)
                .filter(|(v, _)| **v < 0.0)
                .map(|(_, w)| w)
                .sum();
            let c = p.min(1.0 - p).clamp(0.0, 0.5);
            count_based[(i, j)] = c;
            out[(i, j)] = if c > 0.0 {
                c
            } else {
                approximated.push((i, j));
                if sd[(i, j)] > 0.0 {
                    normal.cdf(-mean[(i, j)].abs() / sd[(i, j)])
                } else {
                    0.0
                }
            };
        }
    }
    LfsrEstimate {
        count_based,
        lfsr: out,
        approximated,
    }
}

/// Likelihood approximation used to turn draws into an effect result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Likelihood {
    /// Credible intervals and lfsr straight from the draws.
    Sample,
    /// Draw mean and sd with a normal reference.
    Normal,
    /// Draw mean and sd with `n - k - q` degrees of freedom.
    T,
}

/// Summarises draws as an effect result. `ebvm` moderates the draw variances
/// and is only available with the t likelihood.
pub fn summarize_effects(
    d: &PosteriorDraws,
    likelihood: Likelihood,
    ebvm: bool,
) -> Result<EffectResult> {
    if d.t < 2 {
        return Err(RuvError::invalid("need at least two draws"));
    }
    let mean = posterior_mean(d);
    let sd = posterior_sd(d);
    let ncols = d.columns.len();
    let (dof, tag) = match likelihood {
        Likelihood::Sample => (f64::INFINITY, "ruvb"),
        Likelihood::Normal => (f64::INFINITY, "ruvb-nn"),
        Likelihood::T => (d.dof, "ruvb-n"),
    };
    if ebvm && !dof.is_finite() {
        return Err(RuvError::invalid(
            "variance moderation needs the t likelihood",
        ));
    }
    let mut e = EffectResult::new(
        d.columns.clone(),
        mean,
        sd,
        DVector::from_element(ncols, dof),
        tag,
    )?;
    let signs = lfsr(d);
    if likelihood == Likelihood::Sample {
        e.intervals = Some(credible_interval(d, 0.95)?);
    }
    if ebvm {
        e = calibration::ebvm_effects(&e)?.0;
    }
    e.lfsr = Some(signs.lfsr);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: &[f64]) -> PosteriorDraws {
        PosteriorDraws::new(
            vec![0],
            1,
            values.len(),
            values.to_vec(),
            vec![1.0; values.len()],
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn lfsr_counts_signs() {
        let d = single(&[-1.0, 2.0, 3.0, 4.0]);
        let l = lfsr(&d);
        assert_eq!(l.count_based[(0, 0)], 0.25);
        assert_eq!(l.lfsr[(0, 0)], 0.25);
        assert!(l.approximated.is_empty());
    }

    #[test]
    fn lfsr_switches_to_normal_when_one_sided() {
        let d = single(&[1.0, 2.0, 3.0, 4.0]);
        let l = lfsr(&d);
        assert_eq!(l.count_based[(0, 0)], 0.0);
        assert!(l.lfsr[(0, 0)] > 0.0 && l.lfsr[(0, 0)] < 0.5);
        assert_eq!(l.approximated, vec![(0, 0)]);
    }

    #[test]
    fn uniform_mean_is_arithmetic() {
        let d = single(&[1.0, 2.0, 6.0]);
        assert!((posterior_mean(&d)[(0, 0)] - 3.0).abs() < 1e-15);
        let sd = posterior_sd(&d)[(0, 0)];
        assert!((sd - 7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_are_rejected() {
        let d = single(&[1.0, 2.0]);
        assert!(matches!(
            d.with_weights(vec![0.0, 0.0]),
            Err(RuvError::PriorSupport)
        ));
    }

    #[test]
    fn interval_uses_order_statistics() {
        let vals: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let iv = credible_interval(&single(&vals), 0.9).unwrap();
        // 5 draws below l = 6 and 5 above m = 95.
        assert_eq!(iv.lower[(0, 0)], 6.0);
        assert_eq!(iv.upper[(0, 0)], 95.0);
    }

    #[test]
    fn constant_draws_floor_se() {
        let e = summarize_effects(&single(&[2.0; 10]), Likelihood::Normal, false).unwrap();
        assert_eq!(e.beta2hat[(0, 0)], 2.0);
        assert!(e.se_floored);
    }

    #[test]
    fn normal_and_t_differ_only_in_dof() {
        let d = single(&[0.3, -0.1, 0.8, 0.4, 0.2]);
        let a = summarize_effects(&d, Likelihood::Normal, false).unwrap();
        let b = summarize_effects(&d, Likelihood::T, false).unwrap();
        assert_eq!(a.beta2hat, b.beta2hat);
        assert_eq!(a.se, b.se);
        assert!(a.dof[0].is_infinite());
        assert_eq!(b.dof[0], 5.0);
    }

    #[test]
    fn mcmc_config_counts() {
        assert_eq!(McmcConfig::default().retained(), 1000);
        let bad = McmcConfig {
            iters: 10,
            burnin: 10,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
