//! Data model and the QR rotation of the factor-augmented regression
//! `Y = X beta + Z alpha + E` into three independent blocks.
//!
//! With `X = Q [R1; 0]` and `R1 = [[R11, R12], [0, R22]]`, the rotated
//! responses `Q'Y` split into
//!
//! ```text
//! Y1 = R11 beta1 + R12 beta2 + Z1 alpha + E1   (k1 rows, nuisance, ignored)
//! Y2 =             R22 beta2 + Z2 alpha + E2   (k2 rows)
//! Y3 =                         Z3 alpha + E3   (n - k rows)
//! ```

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Result, RuvError};
use crate::linalg::{self, householder_qr};

/// Variances below this value are floored before forming standard errors.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// n x p response matrix (samples in rows, genes in columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
}

impl ResponseMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 || p < 2 {
            return Err(RuvError::invalid(format!(
                "response matrix must be at least 2x2, got {n}x{p}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(RuvError::invalid(format!(
                "non-finite response at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Reorders gene columns; used by permutation-symmetry checks.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        Self {
            values: self.values.select_columns(perm.iter()),
        }
    }
}

/// Covariates `X = (X1, X2)` with `k1` nuisance and `k2` interest columns,
/// plus the negative-control gene indices (0-based, sorted, unique).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    x: DMatrix<f64>,
    k1: usize,
    controls: Vec<usize>,
}

impl Design {
    pub fn new(x: DMatrix<f64>, k1: usize, controls: Vec<usize>) -> Result<Self> {
        let k = x.ncols();
        if k1 >= k {
            return Err(RuvError::invalid(format!(
                "need at least one covariate of interest (k = {k}, k1 = {k1})"
            )));
        }
        if controls.is_empty() {
            return Err(RuvError::invalid("at least one control gene is required"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RuvError::invalid("non-finite entry in design matrix"));
        }
        let mut sorted = controls;
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(RuvError::invalid(format!(
                "duplicate control index {}",
                w[0]
            )));
        }
        Ok(Self {
            x,
            k1,
            controls: sorted,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k2(&self) -> usize {
        self.x.ncols() - self.k1
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn controls(&self) -> &[usize] {
        &self.controls
    }

    pub fn with_controls(&self, controls: Vec<usize>) -> Result<Self> {
        Self::new(self.x.clone(), self.k1, controls)
    }
}

/// Partition of gene columns into controls and non-controls, both in
/// ascending original order.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    controls: Vec<usize>,
    others: Vec<usize>,
    p: usize,
}

impl ControlSet {
    pub fn new(controls: &[usize], p: usize) -> Result<Self> {
        let mut flag = vec![false; p];
        for &c in controls {
            if c >= p {
                return Err(RuvError::invalid(format!(
                    "control index {c} out of range for {p} genes"
                )));
            }
            if flag[c] {
                return Err(RuvError::invalid(format!("duplicate control index {c}")));
            }
            flag[c] = true;
        }
        let controls: Vec<usize> = (0..p).filter(|&j| flag[j]).collect();
        let others: Vec<usize> = (0..p).filter(|&j| !flag[j]).collect();
        if others.is_empty() {
            return Err(RuvError::invalid(
                "every gene is a control; nothing to estimate",
            ));
        }
        Ok(Self {
            controls,
            others,
            p,
        })
    }

    pub fn controls(&self) -> &[usize] {
        &self.controls
    }

    pub fn non_controls(&self) -> &[usize] {
        &self.others
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// The rotated model: `Q`, the blocks of `R1` and the three response blocks.
#[derive(Debug, Clone)]
pub struct RotatedModel {
    pub q: DMatrix<f64>,
    pub r11: DMatrix<f64>,
    pub r12: DMatrix<f64>,
    pub r22: DMatrix<f64>,
    pub y1: DMatrix<f64>,
    pub y2: DMatrix<f64>,
    pub y3: DMatrix<f64>,
    controls: ControlSet,
}

/// Rotates `(Y, X)` by the Householder QR of `X`.
pub fn rotate(y: &ResponseMatrix, d: &Design) -> Result<RotatedModel> {
    let (n, p) = (y.n(), y.p());
    let x = d.x();
    if x.nrows() != n {
        return Err(RuvError::shape(format!(
            "design has {} rows but responses have {n}",
            x.nrows()
        )));
    }
    let (k1, k2, k) = (d.k1(), d.k2(), d.k());
    if n <= k {
        return Err(RuvError::InsufficientSamples { n, k });
    }
    let controls = ControlSet::new(d.controls(), p)?;

    let (q, r) = householder_qr(x);
    let scale = x
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for i in 0..k {
        if r[(i, i)].abs() <= 1e-10 * scale {
            return Err(RuvError::RankDeficiency {
                column: i,
                magnitude: r[(i, i)].abs(),
            });
        }
    }

    let rotated = q.tr_mul(y.values());
    Ok(RotatedModel {
        r11: r.view((0, 0), (k1, k1)).into_owned(),
        r12: r.view((0, k1), (k1, k2)).into_owned(),
        r22: r.view((k1, k1), (k2, k2)).into_owned(),
        y1: rotated.rows(0, k1).into_owned(),
        y2: rotated.rows(k1, k2).into_owned(),
        y3: rotated.rows(k, n - k).into_owned(),
        q,
        controls,
    })
}

impl RotatedModel {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn p(&self) -> usize {
        self.y2.ncols()
    }

    pub fn k1(&self) -> usize {
        self.r11.nrows()
    }

    pub fn k2(&self) -> usize {
        self.r22.nrows()
    }

    pub fn k(&self) -> usize {
        self.k1() + self.k2()
    }

    /// Rows of the residual block, `n - k`.
    pub fn residual_rows(&self) -> usize {
        self.y3.nrows()
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn y2_controls(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.y2, self.controls.controls())
    }

    pub fn y2_non_controls(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.y2, self.controls.non_controls())
    }

    pub fn y3_controls(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.y3, self.controls.controls())
    }

    pub fn y3_non_controls(&self) -> DMatrix<f64> {
        linalg::select_columns(&self.y3, self.controls.non_controls())
    }

    /// Stacked `[Y2; Y3]`, the rows that carry information about `beta2`.
    pub fn y23(&self) -> DMatrix<f64> {
        let (k2, r) = (self.k2(), self.residual_rows());
        let mut out = DMatrix::zeros(k2 + r, self.p());
        out.rows_mut(0, k2).copy_from(&self.y2);
        out.rows_mut(k2, r).copy_from(&self.y3);
        out
    }

    /// `R22^{-1} b` by back-substitution.
    pub fn r22_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.r22
            .solve_upper_triangular(b)
            .expect("R22 has a nonzero diagonal by construction")
    }

    /// Diagonal of `R22^{-1} (I + extra) R22^{-T}`, the per-coefficient
    /// variance multiplier of `beta2` for unit noise variance.
    pub(crate) fn coefficient_multipliers(&self, extra: Option<&DMatrix<f64>>) -> DVector<f64> {
        let k2 = self.k2();
        let mut inner = DMatrix::<f64>::identity(k2, k2);
        if let Some(e) = extra {
            inner += e;
        }
        let rinv = self.r22_solve(&DMatrix::identity(k2, k2));
        let cov = &rinv * inner * rinv.transpose();
        cov.diagonal()
    }
}

/// Confidence or credible intervals matching an [`EffectResult`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub level: f64,
}

/// Per-gene effect estimates for the covariates of interest.
///
/// `beta2hat`, `se` and `tstat` are `k2 x columns.len()`; `columns` holds the
/// original gene indices in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectResult {
    pub columns: Vec<usize>,
    pub beta2hat: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub tstat: DMatrix<f64>,
    /// Degrees of freedom per gene; `f64::INFINITY` means a normal reference.
    pub dof: DVector<f64>,
    pub method: String,
    /// Set when some variance had to be floored to keep `se > 0`.
    pub se_floored: bool,
    pub intervals: Option<Intervals>,
    pub lfsr: Option<DMatrix<f64>>,
}

impl EffectResult {
    /// Builds a result from estimates and standard errors, flooring `se` so
    /// that it stays strictly positive and recomputing `t`.
    pub fn new(
        columns: Vec<usize>,
        beta2hat: DMatrix<f64>,
        se: DMatrix<f64>,
        dof: DVector<f64>,
        method: impl Into<String>,
    ) -> Result<Self> {
        if beta2hat.shape() != se.shape() || beta2hat.ncols() != columns.len() {
            return Err(RuvError::shape(format!(
                "effects {:?}, se {:?}, {} columns",
                beta2hat.shape(),
                se.shape(),
                columns.len()
            )));
        }
        if dof.len() != columns.len() {
            return Err(RuvError::shape("dof length must match column count"));
        }
        let floor = VARIANCE_FLOOR.sqrt();
        let mut floored = false;
        let se = se.map(|s| {
            if s.is_finite() && s >= floor {
                s
            } else {
                floored = true;
                floor
            }
        });
        let tstat = beta2hat.component_div(&se);
        Ok(Self {
            columns,
            beta2hat,
            se,
            tstat,
            dof,
            method: method.into(),
            se_floored: floored,
            intervals: None,
            lfsr: None,
        })
    }

    pub fn k2(&self) -> usize {
        self.beta2hat.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Replaces standard errors, recomputing `t`.
    pub fn with_se(&self, se: DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(
            self.columns.clone(),
            self.beta2hat.clone(),
            se,
            self.dof.clone(),
            self.method.clone(),
        )?;
        out.se_floored |= self.se_floored;
        out.lfsr = self.lfsr.clone();
        Ok(out)
    }

    /// Two-sided p-values from `t` against `t(dof)` (normal when infinite).
    pub fn p_values(&self) -> DMatrix<f64> {
        let mut out = self.tstat.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let dof = self.dof[j];
            for v in col.iter_mut() {
                *v = two_sided_p(*v, dof);
            }
        }
        out
    }

    /// Stored intervals if present, otherwise `beta +/- t_{dof} * se`.
    pub fn confidence_intervals(&self, level: f64) -> Intervals {
        if let Some(iv) = &self.intervals {
            if (iv.level - level).abs() < 1e-12 {
                return iv.clone();
            }
        }
        let mut lower = self.beta2hat.clone();
        let mut upper = self.beta2hat.clone();
        for j in 0..self.len() {
            let crit = critical_value(level, self.dof[j]);
            for i in 0..self.k2() {
                let half = crit * self.se[(i, j)];
                lower[(i, j)] -= half;
                upper[(i, j)] += half;
            }
        }
        Intervals {
            lower,
            upper,
            level,
        }
    }
}

pub(crate) fn two_sided_p(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let tail = if dof.is_finite() {
        StudentsT::new(0.0, 1.0, dof)
            .expect("positive dof")
            .cdf(-t.abs())
    } else {
        Normal::standard().cdf(-t.abs())
    };
    (2.0 * tail).min(1.0)
}

/// Two-sided critical value of `t(dof)` (normal when infinite).
pub fn critical_value(level: f64, dof: f64) -> f64 {
    let prob = 0.5 + level / 2.0;
    if dof.is_finite() {
        StudentsT::new(0.0, 1.0, dof)
            .expect("positive dof")
            .inverse_cdf(prob)
    } else {
        Normal::standard().inverse_cdf(prob)
    }
}

/// Builds an effect result over `columns` from a fitted `Y2` correction.
///
/// `beta2 = R22^{-1}(Y2 - correction)` and
/// `se_ij = sqrt(sigma2_j * mult_i)`, with variances floored.
pub(crate) fn assemble_effects(
    rm: &RotatedModel,
    columns: &[usize],
    correction: Option<&DMatrix<f64>>,
    sigma2: &DVector<f64>,
    multipliers: &DVector<f64>,
    dof: f64,
    method: &str,
) -> Result<EffectResult> {
    let y2 = linalg::select_columns(&rm.y2, columns);
    let target = match correction {
        Some(c) => {
            let c = linalg::select_columns(c, columns);
            y2 - c
        }
        None => y2,
    };
    let beta = rm.r22_solve(&target);
    let mut floored = false;
    let se = DMatrix::from_fn(rm.k2(), columns.len(), |i, j| {
        let mut s2 = sigma2[columns[j]];
        if !(s2 >= VARIANCE_FLOOR) {
            s2 = VARIANCE_FLOOR;
            floored = true;
        }
        (s2 * multipliers[i]).sqrt()
    });
    let mut out = EffectResult::new(
        columns.to_vec(),
        beta,
        se,
        DVector::from_element(columns.len(), dof),
        method,
    )?;
    out.se_floored |= floored;
    Ok(out)
}

/// Ordinary least squares effects of the covariates of interest for the
/// non-control genes, with residual variance from `Y3` on `n - k` dof.
pub fn ols_effects(rm: &RotatedModel) -> Result<EffectResult> {
    let (sigma2, mult, dof) = ols_variance_parts(rm)?;
    assemble_effects(
        rm,
        rm.controls().non_controls(),
        None,
        &sigma2,
        &mult,
        dof,
        "ols",
    )
}

/// OLS effects restricted to the control genes (input to control-gene
/// calibration).
pub fn ols_control_effects(rm: &RotatedModel) -> Result<EffectResult> {
    let (sigma2, mult, dof) = ols_variance_parts(rm)?;
    assemble_effects(
        rm,
        rm.controls().controls(),
        None,
        &sigma2,
        &mult,
        dof,
        "ols",
    )
}

fn ols_variance_parts(rm: &RotatedModel) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let dof = rm.residual_rows();
    if dof == 0 {
        return Err(RuvError::ZeroDof {
            context: "OLS needs n - k > 0".into(),
        });
    }
    let sigma2 = linalg::column_sum_squares(&rm.y3) / dof as f64;
    Ok((sigma2, rm.coefficient_multipliers(None), dof as f64))
}

/// `R22^{-1}(Y2_nonC - z2alpha)` for a `k2 x (p - m)` correction.
pub fn recover_beta2(rm: &RotatedModel, z2alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let y2 = rm.y2_non_controls();
    if z2alpha.shape() != y2.shape() {
        return Err(RuvError::shape(format!(
            "correction is {:?} but Y2 non-control block is {:?}",
            z2alpha.shape(),
            y2.shape()
        )));
    }
    Ok(rm.r22_solve(&(y2 - z2alpha)))
}
