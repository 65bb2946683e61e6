//! Tab-separated tables and the binary posterior-draw format.
//!
//! Matrices are written with a header row of column ids and one row per
//! sample whose first field is the sample id. Numbers use Rust's shortest
//! round-trip formatting, so tables are byte-stable for identical inputs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::calibration::CalibrationReport;
use crate::error::{Result, RuvError};
use crate::model::EffectResult;
use crate::ruvb::PosteriorDraws;
use crate::simulation::SimTruth;

/// A numeric table with row and column ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != rows.len() || values.ncols() != cols.len() {
            return Err(RuvError::shape(format!(
                "{}x{} values with {} row ids and {} column ids",
                values.nrows(),
                values.ncols(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self {
            corner: "sample".into(),
            rows,
            cols,
            values,
        })
    }

    /// Integer-valued tables render without a decimal point.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.corner);
        for c in &self.cols {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(r);
            for j in 0..self.cols.len() {
                write!(out, "\t{}", fmt_num(self.values[(i, j)])).expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        let (ln, header) = lines
            .next()
            .ok_or_else(|| RuvError::invalid("empty table"))?;
        let mut head = header.split('\t');
        let corner = head.next().unwrap_or_default().to_string();
        let cols: Vec<String> = head.map(str::to_string).collect();
        if cols.is_empty() {
            return Err(RuvError::invalid(format!(
                "line {ln}: header has no columns"
            )));
        }
        check_unique(&cols, "column")?;
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in lines {
            let mut f = line.split('\t');
            rows.push(f.next().unwrap_or_default().to_string());
            let before = values.len();
            for s in f {
                values.push(parse_num(s).map_err(|e| at_line(ln, e))?);
            }
            if values.len() - before != cols.len() {
                return Err(RuvError::invalid(format!(
                    "line {ln}: expected {} values, found {}",
                    cols.len(),
                    values.len() - before
                )));
            }
        }
        if rows.is_empty() {
            return Err(RuvError::invalid("table has no data rows"));
        }
        check_unique(&rows, "row")?;
        let values = DMatrix::from_row_slice(rows.len(), cols.len(), &values);
        Ok(Self {
            corner,
            rows,
            cols,
            values,
        })
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn at_line(ln: usize, e: RuvError) -> RuvError {
    RuvError::invalid(format!("line {ln}: {e}"))
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(RuvError::invalid(format!(
                "duplicate {what} id `{id}` at positions {prev} and {i}"
            )));
        }
    }
    Ok(())
}

/// Formats a number so that it parses back to the same value.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

pub fn parse_num(s: &str) -> Result<f64> {
    match s.trim() {
        "NA" | "NaN" | "nan" => Ok(f64::NAN),
        "inf" | "Inf" => Ok(f64::INFINITY),
        "-inf" | "-Inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|_| RuvError::invalid(format!("cannot parse number `{t}`"))),
    }
}

/// Reads a control list: one gene id per line, `#` comments allowed.
pub fn parse_id_list(text: &str) -> Vec<String> {
    data_lines(text)
        .map(|(_, l)| l.trim().to_string())
        .collect()
}

/// Maps ids to column positions; unknown or repeated ids are errors.
pub fn resolve_ids(ids: &[String], genes: &[String]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = genes
        .iter()
        .enumerate()
        .map(|(j, g)| (g.as_str(), j))
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let j = *index
            .get(id.as_str())
            .ok_or_else(|| RuvError::invalid(format!("unknown gene id `{id}`")))?;
        out.push(j);
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(RuvError::invalid("control list repeats a gene"));
    }
    Ok(out)
}

pub const EFFECTS_HEADER: &str = "gene\tcoef\tbeta\tse\tt\tdof\tp_value\tlfsr\tlower\tupper";

/// One row per reported gene and covariate of interest. `lower`/`upper`
/// are the 95% intervals (credible intervals in sample mode).
pub fn effects_to_tsv(e: &EffectResult, genes: &[String], coefs: &[String]) -> Result<String> {
    if coefs.len() != e.k2() {
        return Err(RuvError::shape(format!(
            "{} coefficient names for {} covariates",
            coefs.len(),
            e.k2()
        )));
    }
    let p = e.p_values();
    let iv = e.confidence_intervals(0.95);
    let mut out = String::from(EFFECTS_HEADER);
    out.push('\n');
    for (jj, &j) in e.columns.iter().enumerate() {
        let gene = genes
            .get(j)
            .ok_or_else(|| RuvError::shape(format!("no id for gene column {j}")))?;
        for (i, coef) in coefs.iter().enumerate() {
            let lfsr = e.lfsr.as_ref().map_or(f64::NAN, |l| l[(i, jj)]);
            writeln!(
                out,
                "{gene}\t{coef}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                fmt_num(e.beta2hat[(i, jj)]),
                fmt_num(e.se[(i, jj)]),
                fmt_num(e.tstat[(i, jj)]),
                fmt_num(e.dof[jj]),
                fmt_num(p[(i, jj)]),
                fmt_num(lfsr),
                fmt_num(iv.lower[(i, jj)]),
                fmt_num(iv.upper[(i, jj)]),
            )
            .expect("writing to a string");
        }
    }
    Ok(out)
}

/// A parsed effects-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub gene: String,
    pub coef: String,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub lfsr: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn effects_from_tsv(text: &str) -> Result<Vec<EffectRow>> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if h == EFFECTS_HEADER => {}
        _ => return Err(RuvError::invalid("effects table header not recognised")),
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 10 {
                return Err(RuvError::invalid(format!(
                    "line {ln}: expected 10 fields, found {}",
                    f.len()
                )));
            }
            let n = |k: usize| parse_num(f[k]).map_err(|e| at_line(ln, e));
            Ok(EffectRow {
                gene: f[0].into(),
                coef: f[1].into(),
                beta: n(2)?,
                se: n(3)?,
                t: n(4)?,
                dof: n(5)?,
                p_value: n(6)?,
                lfsr: n(7)?,
                lower: n(8)?,
                upper: n(9)?,
            })
        })
        .collect()
}

pub const TRUTH_HEADER: &str = "gene\tnonnull\teffect";

pub fn truth_to_tsv(t: &SimTruth, genes: &[String]) -> String {
    let flags = t.is_nonnull();
    let effects = t.effect_vector();
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for (j, g) in genes.iter().enumerate() {
        writeln!(out, "{g}\t{}\t{}", u8::from(flags[j]), fmt_num(effects[j]))
            .expect("writing to a string");
    }
    out
}

/// Parses a truth table into `(gene id, non-null flag, effect)` triples.
pub fn truth_from_tsv(text: &str) -> Result<Vec<(String, bool, f64)>> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if h == TRUTH_HEADER => {}
        _ => return Err(RuvError::invalid("truth table header not recognised")),
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(RuvError::invalid(format!("line {ln}: expected 3 fields")));
            }
            let flag = match f[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(RuvError::invalid(format!(
                        "line {ln}: non-null flag must be 0 or 1, got `{other}`"
                    )))
                }
            };
            Ok((
                f[0].to_string(),
                flag,
                parse_num(f[2]).map_err(|e| at_line(ln, e))?,
            ))
        })
        .collect()
}

pub const REPORT_HEADER: &str =
    "step\tmethod\tcoef\tlambda\tcenter\tprior_dof\tflagged\tinputs_hash";

/// One row per calibration step and covariate (EBVM has a single row).
pub fn reports_to_tsv(reports: &[CalibrationReport], coefs: &[String]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (s, r) in reports.iter().enumerate() {
        for (i, lambda) in r.lambda.iter().enumerate() {
            let coef = if r.lambda.len() == coefs.len() {
                coefs[i].as_str()
            } else {
                "*"
            };
            let center = r.center.as_ref().map_or(f64::NAN, |c| c[i]);
            writeln!(
                out,
                "{}\t{}\t{coef}\t{}\t{}\t{}\t{}\t{}",
                s + 1,
                r.method.label(),
                fmt_num(*lambda),
                fmt_num(center),
                fmt_num(r.prior_dof.unwrap_or(f64::NAN)),
                u8::from(r.flagged),
                r.inputs_hash
            )
            .expect("writing to a string");
        }
    }
    out
}

const DRAWS_MAGIC: &[u8; 8] = b"RUVDRAWS";
pub const DRAWS_VERSION: u32 = 1;

/// Binary draw file, little-endian:
///
/// ```text
/// magic "RUVDRAWS" | version u32 | k2 u32 | ncols u32 | t u32 | dof f64
/// ncols x (column u64 | id length u32 | id bytes)
/// t x weight f64
/// k2 * ncols * t x value f64, ordered by (row, column, draw)
/// ```
pub fn write_draws(w: &mut impl Write, d: &PosteriorDraws, ids: &[String]) -> Result<()> {
    if ids.len() != d.columns().len() {
        return Err(RuvError::shape("one id per draw column required"));
    }
    let io = |e: std::io::Error| RuvError::invalid(format!("writing draws: {e}"));
    let mut buf = Vec::with_capacity(32 + 8 * d.values().len());
    buf.extend_from_slice(DRAWS_MAGIC);
    for v in [DRAWS_VERSION, d.k2() as u32, ids.len() as u32, d.t() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&d.dof().to_le_bytes());
    for (&c, id) in d.columns().iter().zip(ids) {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for v in d.weights().iter().chain(d.values()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

/// Reads a draw file, returning the draws and the column ids.
pub fn read_draws(r: &mut impl Read) -> Result<(PosteriorDraws, Vec<String>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| RuvError::invalid(format!("reading draws: {e}")))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8)? != DRAWS_MAGIC {
        return Err(RuvError::invalid("not a draw file"));
    }
    let version = cur.u32()?;
    if version != DRAWS_VERSION {
        return Err(RuvError::invalid(format!(
            "unsupported draw file version {version}"
        )));
    }
    let (k2, ncols, t) = (
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    );
    let dof = cur.f64()?;
    let mut columns = Vec::with_capacity(ncols);
    let mut ids = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        columns.push(cur.u64()? as usize);
        let len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| RuvError::invalid("gene id is not UTF-8"))?;
        ids.push(id.to_string());
    }
    let weights = (0..t).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let values = (0..k2 * ncols * t)
        .map(|_| cur.f64())
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != bytes.len() {
        return Err(RuvError::invalid("trailing bytes after draws"));
    }
    Ok((
        PosteriorDraws::new(columns, k2, t, values, weights, dof)?,
        ids,
    ))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RuvError::invalid("draw file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
