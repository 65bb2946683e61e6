//! Method tags and the end-to-end fitting pipeline.
//!
//! A tag is a family followed by dash-separated modifiers, for example
//! `ruv3-la-c` or `ruvb-nn`:
//!
//! | modifier | meaning |
//! |----------|---------|
//! | `o` | original variances (default, omitted when printed) |
//! | `m` | MAD calibration |
//! | `c` | control-gene calibration |
//! | `l` | EBVM after the fit |
//! | `la`, `lb` | EBVM after / before GLS (`ruv3` and `cate` only) |
//! | `n`, `nn` | t / normal likelihood (`ruvb` only) |
//!
//! Without `n` or `nn`, `ruvb` reports sample-based intervals and lfsr.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::calibration::{self, CalibrationReport};
use crate::error::{Result, RuvError};
use crate::estimators::{self, FitOptions, Ruv4Mode};
use crate::evaluation::RankScore;
use crate::factor::{estimate_num_factors, TruncatedSvd};
use crate::model::{self, Design, EffectResult, ResponseMatrix};
use crate::ruvb::{self, BfaHyper, Likelihood, McmcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Ols,
    Ruv2,
    Ruv2Old,
    Ruv3,
    Ruv4,
    Cate,
    Ruvb,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Ols,
        Family::Ruv2,
        Family::Ruv2Old,
        Family::Ruv3,
        Family::Ruv4,
        Family::Cate,
        Family::Ruvb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ruv2 => "ruv2",
            Family::Ruv2Old => "ruv2old",
            Family::Ruv3 => "ruv3",
            Family::Ruv4 => "ruv4",
            Family::Cate => "cate",
            Family::Ruvb => "ruvb",
        }
    }

    fn has_gls(self) -> bool {
        matches!(self, Family::Ruv3 | Family::Cate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Calibration {
    None,
    Mad,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Moderation {
    None,
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub family: Family,
    pub calibration: Calibration,
    pub moderation: Moderation,
    /// Only meaningful for `ruvb`.
    pub likelihood: Likelihood,
}

impl MethodSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            calibration: Calibration::None,
            moderation: Moderation::None,
            likelihood: Likelihood::Sample,
        }
    }

    /// How genes should be ranked when scoring this method.
    pub fn rank_score(&self) -> RankScore {
        if self.family == Family::Ruvb && self.likelihood == Likelihood::Sample {
            RankScore::LfsrComplement
        } else {
            RankScore::AbsT
        }
    }

    fn validate(&self, tag: &str) -> Result<()> {
        let err = |reason: &str| {
            Err(RuvError::MethodTag {
                tag: tag.to_string(),
                reason: reason.to_string(),
            })
        };
        let ruvb = self.family == Family::Ruvb;
        if !ruvb && self.likelihood != Likelihood::Sample {
            return err("n and nn only apply to ruvb");
        }
        if self.moderation == Moderation::Before && !self.family.has_gls() {
            return err("lb only applies to ruv3 and cate");
        }
        if ruvb {
            if self.calibration != Calibration::None {
                return err("ruvb does not take m or c");
            }
            if self.moderation != Moderation::None && self.likelihood != Likelihood::T {
                return err("ruvb takes l only together with n");
            }
        }
        Ok(())
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family.name())?;
        match self.likelihood {
            Likelihood::Sample => {}
            Likelihood::T => f.write_str("-n")?,
            Likelihood::Normal => f.write_str("-nn")?,
        }
        match self.moderation {
            Moderation::None => {}
            Moderation::Before => f.write_str("-lb")?,
            Moderation::After if self.family.has_gls() => f.write_str("-la")?,
            Moderation::After => f.write_str("-l")?,
        }
        match self.calibration {
            Calibration::None => Ok(()),
            Calibration::Mad => f.write_str("-m"),
            Calibration::Control => f.write_str("-c"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = RuvError;

    fn from_str(tag: &str) -> Result<Self> {
        let lower = tag.trim().to_ascii_lowercase();
        let mut parts = lower.split('-');
        let err = |reason: String| RuvError::MethodTag {
            tag: tag.to_string(),
            reason,
        };
        let head = parts.next().unwrap_or_default();
        let family = Family::ALL
            .into_iter()
            .find(|f| f.name() == head)
            .ok_or_else(|| err(format!("unknown family `{head}`")))?;
        let mut spec = MethodSpec::new(family);
        let (mut cal, mut modr, mut lik) = (false, false, false);
        for m in parts {
            let slot = match m {
                "o" | "m" | "c" => &mut cal,
                "l" | "la" | "lb" => &mut modr,
                "n" | "nn" => &mut lik,
                "d" => {
                    return Err(err(
                        "additive variance inflation (d) is not supported".into()
                    ))
                }
                "" => return Err(err("empty modifier".into())),
                other => return Err(err(format!("unknown modifier `{other}`"))),
            };
            if *slot {
                return Err(err(format!("conflicting modifier `{m}`")));
            }
            *slot = true;
            match m {
                "o" => spec.calibration = Calibration::None,
                "m" => spec.calibration = Calibration::Mad,
                "c" => spec.calibration = Calibration::Control,
                "l" | "la" => spec.moderation = Moderation::After,
                "lb" => spec.moderation = Moderation::Before,
                "n" => spec.likelihood = Likelihood::T,
                _ => spec.likelihood = Likelihood::Normal,
            }
        }
        spec.validate(tag)?;
        Ok(spec)
    }
}

/// How the number of factors is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorCount {
    Fixed(usize),
    /// Parallel analysis on the residual block `Y3`.
    Auto {
        n_perms: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub q: FactorCount,
    pub mcmc: McmcConfig,
    pub hyper: BfaHyper,
    /// Per-gene keys for the RUVB random streams; column indices if `None`.
    pub gene_keys: Option<Vec<u64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            q: FactorCount::Auto {
                n_perms: 20,
                seed: 1,
            },
            mcmc: McmcConfig::default(),
            hyper: BfaHyper::default(),
            gene_keys: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub effect: EffectResult,
    pub q: usize,
    pub reports: Vec<CalibrationReport>,
    /// Posterior draws for `ruvb`.
    pub draws: Option<ruvb::PosteriorDraws>,
}

/// Resolves the factor count. Parallel analysis is run on `Y3`; the result
/// is clamped to `[1, min(m, n - k) - 1]`.
pub fn resolve_q(rm: &model::RotatedModel, q: FactorCount) -> Result<usize> {
    match q {
        FactorCount::Fixed(q) => Ok(q),
        FactorCount::Auto { n_perms, seed } => {
            let est = estimate_num_factors(&rm.y3, n_perms, seed)?;
            let cap = rm.controls().m().min(rm.residual_rows()).saturating_sub(1);
            if cap == 0 {
                return Err(RuvError::ZeroDof {
                    context: "no room for even one factor".into(),
                });
            }
            Ok(est.clamp(1, cap))
        }
    }
}

/// Moderates non-control and control effects with one prior fit on all genes.
fn moderate_pair(
    effect: &EffectResult,
    controls: &EffectResult,
) -> Result<(EffectResult, EffectResult, Option<CalibrationReport>)> {
    let var = |e: &EffectResult| -> Vec<f64> { e.se.row(0).iter().map(|s| s * s).collect() };
    let mut all = var(effect);
    all.extend(var(controls));
    let mut dofs: Vec<f64> = effect.dof.iter().copied().collect();
    dofs.extend(controls.dof.iter());
    let Some(prior) = calibration::fit_ebvm_prior(&all, &dofs)? else {
        log::warn!("too few genes for variance moderation; passing through");
        return Ok((effect.clone(), controls.clone(), None));
    };
    let apply = |e: &EffectResult| -> Result<EffectResult> {
        let v = var(e);
        let d: Vec<f64> = e.dof.iter().copied().collect();
        let out = calibration::ebvm_with_prior(&v, &d, prior);
        let se = nalgebra::DMatrix::from_fn(e.k2(), e.len(), |i, j| {
            e.se[(i, j)] * (out.variances[j] / v[j]).sqrt()
        });
        let mut r = e.with_se(se)?;
        r.dof = DVector::from_vec(out.dofs);
        Ok(r)
    };
    let report = CalibrationReport {
        method: calibration::CalibrationMethod::Ebvm,
        lambda: vec![prior.s0sq],
        center: None,
        prior_dof: Some(prior.d0),
        flagged: prior.d0 >= calibration::EBVM_D0_CAP,
        inputs_hash: calibration::hash_values([&effect.se, &controls.se]),
    };
    Ok((apply(effect)?, apply(controls)?, Some(report)))
}

/// Fits a tagged method end to end.
pub fn fit_method(
    y: &ResponseMatrix,
    d: &Design,
    spec: &MethodSpec,
    cfg: &FitConfig,
) -> Result<MethodOutput> {
    let rm = model::rotate(y, d)?;
    let q = if spec.family == Family::Ols {
        0
    } else {
        resolve_q(&rm, cfg.q)?
    };
    let fa = TruncatedSvd::new();
    let before = FitOptions {
        moderate_before_gls: spec.moderation == Moderation::Before,
    };
    let mut reports = Vec::new();

    if spec.family == Family::Ruvb {
        let keys: Vec<u64> = cfg
            .gene_keys
            .clone()
            .unwrap_or_else(|| (0..rm.p() as u64).collect());
        let draws = ruvb::run_ruvb_keyed(&rm, q, &cfg.hyper, &cfg.mcmc, &keys)?;
        let mut effect =
            ruvb::summarize_effects(&draws, spec.likelihood, spec.moderation != Moderation::None)?;
        effect.method = spec.to_string();
        return Ok(MethodOutput {
            effect,
            q,
            reports,
            draws: Some(draws),
        });
    }

    let (mut effect, mut controls) = match spec.family {
        Family::Ols => (model::ols_effects(&rm)?, model::ols_control_effects(&rm)?),
        Family::Ruv2 => split(estimators::ruv2(&rm, &fa, q)?),
        Family::Ruv2Old => split(estimators::ruv2_old(y, d, &fa, q)?),
        Family::Ruv3 => split(estimators::ruv3_with(&rm, &fa, q, before)?),
        Family::Ruv4 => split(estimators::ruv4(&rm, &fa, q, Ruv4Mode::Ols)?),
        Family::Cate => split(estimators::ruv4_with(&rm, &fa, q, Ruv4Mode::Gls, before)?),
        Family::Ruvb => unreachable!("handled above"),
    };
    if spec.moderation == Moderation::After {
        let (e, c, report) = moderate_pair(&effect, &controls)?;
        effect = e;
        controls = c;
        reports.extend(report);
    }
    match spec.calibration {
        Calibration::None => {}
        Calibration::Mad => {
            let (e, r) = calibration::mad_calibrate(&effect)?;
            effect = e;
            reports.push(r);
        }
        Calibration::Control => {
            let (e, r) = calibration::control_calibrate(&effect, &controls)?;
            effect = e;
            reports.push(r);
        }
    }
    effect.method = spec.to_string();
    Ok(MethodOutput {
        effect,
        q,
        reports,
        draws: None,
    })
}

fn split(fit: estimators::RuvFit) -> (EffectResult, EffectResult) {
    (fit.effect, fit.control_effect)
}
