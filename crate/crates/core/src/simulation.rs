//! Synthetic differential-expression datasets: null Poisson counts with
//! latent structure, balanced two-group designs and signal added by binomial
//! thinning.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Result, RuvError};
use crate::factor::derive_seed;
use crate::model::{Design, ResponseMatrix};

/// Nonnegative integer counts, samples in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    counts: DMatrix<u64>,
}

impl CountMatrix {
    pub fn new(counts: DMatrix<u64>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn p(&self) -> usize {
        self.counts.ncols()
    }

    /// `log2(count + 1)`.
    pub fn log2_responses(&self) -> Result<ResponseMatrix> {
        ResponseMatrix::new(self.counts.map(|c| (c as f64 + 1.0).log2()))
    }
}

/// Parameters of the null count generator. Gene log-means are normal with
/// median `ln(median_count)`; each latent factor adds `z_i b_j` on the log
/// scale with `z_i ~ N(0, 1)` and `b_j ~ N(0, factor_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullModel {
    pub median_count: f64,
    pub log_mean_sd: f64,
    pub factor_sd: f64,
}

impl Default for NullModel {
    fn default() -> Self {
        Self {
            median_count: 100.0,
            log_mean_sd: 0.7,
            factor_sd: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    /// Proportion of null genes.
    pub pi0: f64,
    /// Standard deviation of the log2 fold changes.
    pub effect_sd: f64,
    pub seed: u64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            pi0: 0.5,
            effect_sd: 0.8,
            seed: 1,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi0) {
            return Err(RuvError::invalid(format!(
                "pi0 = {} outside [0, 1]",
                self.pi0
            )));
        }
        if !(self.effect_sd > 0.0 && self.effect_sd.is_finite()) {
            return Err(RuvError::invalid("effect_sd must be positive"));
        }
        Ok(())
    }
}

/// What was planted.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// Sorted indices of the non-null genes.
    pub nonnull: Vec<usize>,
    /// Log2 fold change of each non-null gene, aligned with `nonnull`.
    pub effects: Vec<f64>,
    /// Group indicator (0 or 1) per sample.
    pub group: Vec<f64>,
    pub p: usize,
}

impl SimTruth {
    /// True effect of every gene (zero for nulls).
    pub fn effect_vector(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (&j, &a) in self.nonnull.iter().zip(&self.effects) {
            out[j] = a;
        }
        out
    }

    pub fn is_nonnull(&self) -> Vec<bool> {
        let mut out = vec![false; self.p];
        for &j in &self.nonnull {
            out[j] = true;
        }
        out
    }

    pub fn nulls(&self) -> Vec<usize> {
        let flag = self.is_nonnull();
        (0..self.p).filter(|&j| !flag[j]).collect()
    }
}

pub fn generate_null_counts(n: usize, p: usize, q_latent: usize, seed: u64) -> Result<CountMatrix> {
    generate_null_counts_with(n, p, q_latent, &NullModel::default(), seed)
}

pub fn generate_null_counts_with(
    n: usize,
    p: usize,
    q_latent: usize,
    model: &NullModel,
    seed: u64,
) -> Result<CountMatrix> {
    if n < 2 || p < 2 {
        return Err(RuvError::invalid(format!("need n, p >= 2, got {n}x{p}")));
    }
    if !(model.median_count > 0.0 && model.log_mean_sd >= 0.0 && model.factor_sd >= 0.0) {
        return Err(RuvError::invalid(format!("invalid null model {model:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Normal::new(model.median_count.ln(), model.log_mean_sd)
        .map_err(|e| RuvError::invalid(e.to_string()))?;
    let mu: Vec<f64> = (0..p).map(|_| base.sample(&mut rng)).collect();
    let z = DMatrix::<f64>::from_fn(n, q_latent, |_, _| StandardNormal.sample(&mut rng));
    let b = DMatrix::<f64>::from_fn(q_latent, p, |_, _| {
        let s: f64 = StandardNormal.sample(&mut rng);
        model.factor_sd * s
    });
    let latent = &z * &b;
    let mut counts = DMatrix::<u64>::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            let rate = (mu[j] + latent[(i, j)]).exp();
            let draw = Poisson::new(rate)
                .map_err(|e| RuvError::Numerical(format!("poisson rate {rate}: {e}")))?
                .sample(&mut rng);
            counts[(i, j)] = draw as u64;
        }
    }
    Ok(CountMatrix::new(counts))
}

/// Random balanced 0/1 assignment of `n` samples.
pub fn balanced_groups(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n % 2 == 1 {
        return Err(RuvError::Unbalanced(format!(
            "cannot split {n} samples into equal groups"
        )));
    }
    let mut g: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
    g.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(g)
}

/// Adds signal by binomial thinning. A gene with log2 fold change `a < 0`
/// keeps each read of a group-1 sample with probability `2^a`; with `a > 0`
/// group-0 samples are thinned by `2^{-a}`. Null genes are left untouched.
pub fn thin_signal(
    z: &CountMatrix,
    spec: &SignalSpec,
    group: &[f64],
) -> Result<(CountMatrix, SimTruth)> {
    spec.validate()?;
    let (n, p) = (z.n(), z.p());
    if group.len() != n {
        return Err(RuvError::shape(format!(
            "{} group labels for {n} samples",
            group.len()
        )));
    }
    if group.iter().any(|g| *g != 0.0 && *g != 1.0) {
        return Err(RuvError::invalid("group labels must be 0 or 1"));
    }
    let ones = group.iter().filter(|g| **g == 1.0).count();
    if 2 * ones != n {
        return Err(RuvError::Unbalanced(format!(
            "{ones} of {n} samples in group 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_nonnull = ((1.0 - spec.pi0) * p as f64).round() as usize;
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut rng);
    let mut nonnull: Vec<usize> = idx[..n_nonnull].to_vec();
    nonnull.sort_unstable();
    let effect = Normal::new(0.0, spec.effect_sd).expect("validated sd");
    let effects: Vec<f64> = nonnull
        .iter()
        .map(|_| loop {
            let a: f64 = effect.sample(&mut rng);
            if a != 0.0 {
                break a;
            }
        })
        .collect();

    let mut w = z.counts().clone();
    for (&j, &a) in nonnull.iter().zip(&effects) {
        for i in 0..n {
            let prob = if a < 0.0 {
                2f64.powf(a * group[i])
            } else {
                2f64.powf(-a * (1.0 - group[i]))
            };
            if prob < 1.0 {
                w[(i, j)] = thin(z.counts()[(i, j)], prob, &mut rng)?;
            }
        }
    }
    Ok((
        CountMatrix::new(w),
        SimTruth {
            nonnull,
            effects,
            group: group.to_vec(),
            p,
        },
    ))
}

fn thin<R: Rng>(count: u64, prob: f64, rng: &mut R) -> Result<u64> {
    if count == 0 {
        return Ok(0);
    }
    Binomial::new(count, prob)
        .map(|b| b.sample(rng))
        .map_err(|e| RuvError::Numerical(format!("binomial({count}, {prob}): {e}")))
}

/// Scenario parameters for a full synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub q_latent: usize,
    /// Number of control genes.
    pub m: usize,
    pub pi0: f64,
    pub effect_sd: f64,
    pub null_model: NullModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 20,
            p: 500,
            q_latent: 3,
            m: 50,
            pi0: 0.5,
            effect_sd: 0.8,
            null_model: NullModel::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub counts: CountMatrix,
    pub y: ResponseMatrix,
    pub design: Design,
    pub truth: SimTruth,
}

/// Null counts, random balanced groups, thinning, `Y = log2(W + 1)`,
/// `X = [1, group]` and controls drawn uniformly from the true nulls.
/// Sub-seeds for each stage are derived from `seed`.
pub fn make_dataset(s: &Scenario, seed: u64) -> Result<Dataset> {
    let null =
        generate_null_counts_with(s.n, s.p, s.q_latent, &s.null_model, derive_seed(seed, 0))?;
    let group = balanced_groups(s.n, derive_seed(seed, 1))?;
    let spec = SignalSpec {
        pi0: s.pi0,
        effect_sd: s.effect_sd,
        seed: derive_seed(seed, 2),
    };
    let (w, truth) = thin_signal(&null, &spec, &group)?;
    let mut nulls = truth.nulls();
    if s.m == 0 || s.m > nulls.len() {
        return Err(RuvError::invalid(format!(
            "requested {} controls but only {} null genes",
            s.m,
            nulls.len()
        )));
    }
    nulls.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)));
    let controls = nulls[..s.m].to_vec();
    let x = DMatrix::from_fn(s.n, 2, |i, j| if j == 0 { 1.0 } else { group[i] });
    let design = Design::new(x, 1, controls)?;
    Ok(Dataset {
        y: w.log2_responses()?,
        counts: w,
        design,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_null_thinning_is_identity() {
        let z = generate_null_counts(6, 30, 1, 4).unwrap();
        let g = balanced_groups(6, 1).unwrap();
        let spec = SignalSpec {
            pi0: 1.0,
            ..SignalSpec::default()
        };
        let (w, truth) = thin_signal(&z, &spec, &g).unwrap();
        assert_eq!(w, z);
        assert!(truth.nonnull.is_empty());
    }

    #[test]
    fn thinning_never_adds_reads() {
        let z = generate_null_counts(8, 50, 2, 5).unwrap();
        let g = balanced_groups(8, 2).unwrap();
        let (w, truth) = thin_signal(&z, &SignalSpec::default(), &g).unwrap();
        assert_eq!(truth.nonnull.len(), 25);
        let nn = truth.is_nonnull();
        for j in 0..50 {
            for i in 0..8 {
                assert!(w.counts()[(i, j)] <= z.counts()[(i, j)]);
                if !nn[j] {
                    assert_eq!(w.counts()[(i, j)], z.counts()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn odd_groups_are_rejected() {
        assert!(matches!(
            balanced_groups(5, 1),
            Err(RuvError::Unbalanced(_))
        ));
        let z = generate_null_counts(4, 5, 0, 1).unwrap();
        assert!(matches!(
            thin_signal(&z, &SignalSpec::default(), &[1.0, 1.0, 1.0, 0.0]),
            Err(RuvError::Unbalanced(_))
        ));
    }

    #[test]
    fn datasets_are_deterministic() {
        let s = Scenario {
            n: 6,
            p: 40,
            m: 5,
            ..Scenario::default()
        };
        let a = make_dataset(&s, 9).unwrap();
        let b = make_dataset(&s, 9).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.design, b.design);
        let nn = a.truth.is_nonnull();
        assert!(a.design.controls().iter().all(|&c| !nn[c]));
    }

    #[test]
    fn too_many_controls() {
        let s = Scenario {
            n: 6,
            p: 40,
            m: 30,
            ..Scenario::default()
        };
        assert!(make_dataset(&s, 1).is_err());
    }
}
