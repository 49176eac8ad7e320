//! Least-squares regression tables for arm, order, round and length effects on
//! fecundity, and the superset-size extrapolation sweep.
//!
//! Fits use a Householder QR of the `sqrt(w)`-scaled design. Standard errors
//! are classical (homoskedastic) unless HC1 is requested. Two-sided
//! p-values come from Student's t on the residual degrees of freedom, or the
//! standard normal when those exceed 200.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use thiserror::Error;

use crate::corpus_model::{corpus_fecundity, Document, ModelError};
use crate::selection::{
    LazyGreedy, Ranking, SelectionBudget, SelectionError, SelectionRequest, Selector, ValueFunction,
};

pub const FECUNDITY: &str = "fecundity";
pub const AI_SELECTED: &str = "ai_selected";
pub const OVERLAP: &str = "overlap";
pub const OLD_RANDOM: &str = "old_random";
pub const INDEX: &str = "index";
pub const INDEX_SQ: &str = "index_sq";
pub const ROUND: &str = "round";
pub const LENGTH: &str = "length";
pub const LENGTH_K: &str = "length_k";
pub const AI_DENSITY: &str = "ai_density";
pub const LENGTH_RESIDUAL: &str = "length_residual";
pub const CONSTANT: &str = "const";

/// Relative size of a QR pivot below which a column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;
/// Above this many residual degrees of freedom p-values use the normal.
const NORMAL_DF: f64 = 200.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("specification {spec}: missing variable `{variable}`")]
    MissingVariable { spec: String, variable: String },
    #[error("column `{column}` is collinear with {}", if with.is_empty() { "nothing (all zero)".to_string() } else { with.join(", ") })]
    RankDeficient { column: String, with: Vec<String> },
    #[error("weight in row {row} is not positive ({value})")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("{n_obs} observations cannot identify {n_params} parameters")]
    TooFewObservations { n_obs: usize, n_params: usize },
    #[error("outcome `{0}` also appears among the regressors")]
    OutcomeAmongRegressors(String),
    #[error("column `{column}` has {got} rows, table has {expected}")]
    LengthMismatch { column: String, expected: usize, got: usize },
    #[error("column `{column}` row {row} is not finite")]
    NonFinite { column: String, row: usize },
    #[error("subset size {size} exceeds the {available} available documents")]
    SizeExceedsCorpus { size: usize, available: usize },
    #[error("a quadratic needs at least 3 distinct x values, got {0}")]
    TooFewPoints(usize),
    #[error("random-baseline prediction is {0}, cannot normalise")]
    DegenerateBaseline(f64),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    n_rows: usize,
    columns: BTreeMap<String, Vec<f64>>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self, StatsError> {
        self.insert(name, values)?;
        Ok(self)
    }

    /// Adds or replaces a column; the first column fixes the row count.
    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<(), StatsError> {
        if self.columns.is_empty() || (self.columns.len() == 1 && self.columns.contains_key(name)) {
            self.n_rows = values.len();
        } else if values.len() != self.n_rows {
            return Err(StatsError::LengthMismatch { column: name.to_string(), expected: self.n_rows, got: values.len() });
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()))
            .collect();
        DataTable { n_rows: keep.iter().filter(|&&k| k).count(), columns }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), StatsError> {
        let io = |e: csv::Error| StatsError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(self.columns.keys()).map_err(io)?;
        for row in 0..self.n_rows {
            w.write_record(self.columns.values().map(|c| c[row].to_string())).map_err(io)?;
        }
        w.flush().map_err(|e| StatsError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn read_csv(path: &Path) -> Result<Self, StatsError> {
        let err = |m: String| StatsError::Io { path: path.display().to_string(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers: Vec<String> = r.headers().map_err(|e| err(e.to_string()))?.iter().map(String::from).collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            for (i, field) in rec.iter().enumerate() {
                let v = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| err(format!("line {line}: `{field}` in column `{}` is not a number", headers[i])))?;
                cols[i].push(v);
            }
        }
        let mut table = DataTable::new();
        for (h, c) in headers.iter().zip(cols) {
            table.insert(h, c)?;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub name: String,
    pub outcome: String,
    /// An intercept is always included first.
    pub regressors: Vec<String>,
    #[serde(default)]
    pub weights: Option<String>,
    /// HC1 heteroskedasticity-robust standard errors.
    #[serde(default)]
    pub robust: bool,
}

impl RegressionSpec {
    pub fn new(name: &str, outcome: &str, regressors: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            outcome: outcome.to_string(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            weights: None,
            robust: false,
        }
    }

    pub fn weighted_by(mut self, column: &str) -> Self {
        self.weights = Some(column.to_string());
        self
    }

    pub fn robust(mut self, robust: bool) -> Self {
        self.robust = robust;
        self
    }

    /// Every column this regression reads.
    pub fn variables(&self) -> Vec<&str> {
        let mut v = vec![self.outcome.as_str()];
        v.extend(self.regressors.iter().map(String::as_str));
        v.extend(self.weights.as_deref());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub spec: RegressionSpec,
    /// Intercept first, then regressors in spec order.
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub df_resid: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub residual_std_error: f64,
    /// Overall F test; `None` for an intercept-only model or an exact fit.
    pub f_statistic: Option<f64>,
    pub f_df: (usize, usize),
    pub f_p_value: Option<f64>,
    /// `y - X b`, unweighted.
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

impl RegressionFit {
    pub fn coef(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    /// Wald interval `estimate +- z * se` using the same reference
    /// distribution as the p-values.
    pub fn confidence_interval(&self, term: &str, level: f64) -> Option<(f64, f64)> {
        let c = self.coef(term)?;
        let q = critical_value(level, self.df_resid as f64);
        Some((c.estimate - q * c.std_error, c.estimate + q * c.std_error))
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let upper = if df > NORMAL_DF {
        Normal::standard().sf(t.abs())
    } else {
        StudentsT::new(0.0, 1.0, df).map(|d| d.sf(t.abs())).unwrap_or(f64::NAN)
    };
    2.0 * upper
}

fn critical_value(level: f64, df: f64) -> f64 {
    let p = 0.5 + level / 2.0;
    if df > NORMAL_DF {
        Normal::standard().inverse_cdf(p)
    } else {
        StudentsT::new(0.0, 1.0, df).map(|d| d.inverse_cdf(p)).unwrap_or(f64::NAN)
    }
}

fn fetch<'t>(data: &'t DataTable, spec: &RegressionSpec, name: &str) -> Result<&'t [f64], StatsError> {
    let col = data
        .column(name)
        .ok_or_else(|| StatsError::MissingVariable { spec: spec.name.clone(), variable: name.to_string() })?;
    if let Some(row) = col.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { column: name.to_string(), row });
    }
    Ok(col)
}

/// (Weighted) least squares of `spec.outcome` on an intercept plus `spec.regressors`.
pub fn ols(data: &DataTable, spec: &RegressionSpec) -> Result<RegressionFit, StatsError> {
    if spec.regressors.contains(&spec.outcome) {
        return Err(StatsError::OutcomeAmongRegressors(spec.outcome.clone()));
    }
    let y = fetch(data, spec, &spec.outcome)?;
    let cols: Vec<&[f64]> = spec.regressors.iter().map(|r| fetch(data, spec, r)).collect::<Result<_, _>>()?;
    let weights = spec.weights.as_deref().map(|w| fetch(data, spec, w)).transpose()?;
    if let Some(w) = weights {
        if let Some(row) = w.iter().position(|&v| v <= 0.0) {
            return Err(StatsError::NonPositiveWeight { row, value: w[row] });
        }
    }

    let n = data.n_rows();
    let p = cols.len() + 1;
    if n <= p {
        return Err(StatsError::TooFewObservations { n_obs: n, n_params: p });
    }
    let names: Vec<String> = std::iter::once(CONSTANT.to_string()).chain(spec.regressors.iter().cloned()).collect();
    let sqrt_w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sqrt_w[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sqrt_w[i]);

    let qr = xw.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = xw.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= COLLINEAR_TOL * norm {
            return Err(StatsError::RankDeficient {
                column: names[j].clone(),
                with: if norm == 0.0 { Vec::new() } else { names[..j].to_vec() },
            });
        }
    }
    let qty = qr.q().transpose() * &yw;
    let beta = r.solve_upper_triangular(&qty).expect("checked nonsingular");
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(p, p)).expect("checked nonsingular");
    let bread = &r_inv * r_inv.transpose();

    let fitted: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum()).collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let w_of = |i: usize| sqrt_w[i] * sqrt_w[i];
    let rss: f64 = residuals.iter().enumerate().map(|(i, e)| w_of(i) * e * e).sum();
    let sw: f64 = (0..n).map(w_of).sum();
    let y_bar = (0..n).map(|i| w_of(i) * y[i]).sum::<f64>() / sw;
    let tss: f64 = (0..n).map(|i| w_of(i) * (y[i] - y_bar).powi(2)).sum();
    let df = n - p;
    let k = p - 1;
    let sigma2 = rss / df as f64;

    let cov = if spec.robust {
        let mut meat = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = xw.row(i).transpose();
            let e = sqrt_w[i] * residuals[i];
            meat += &row * row.transpose() * (e * e);
        }
        &bread * meat * &bread * (n as f64 / df as f64)
    } else {
        &bread * sigma2
    };

    let coefficients = (0..p)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let t = beta[j] / se;
            let pv = two_sided_p(t, df as f64);
            Coefficient {
                term: names[j].clone(),
                estimate: beta[j],
                std_error: se,
                t_stat: t,
                p_value: pv,
                stars: stars(pv).to_string(),
            }
        })
        .collect();

    let r2 = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / df as f64;
    let (f_statistic, f_p_value) = if k > 0 && tss > 0.0 && rss > 0.0 {
        let f = ((tss - rss) / k as f64) / (rss / df as f64);
        let pv = FisherSnedecor::new(k as f64, df as f64).map(|d| d.sf(f)).ok();
        (Some(f), pv)
    } else {
        (None, None)
    };

    Ok(RegressionFit {
        spec: spec.clone(),
        coefficients,
        n_obs: n,
        df_resid: df,
        r2,
        adj_r2,
        residual_std_error: sigma2.sqrt(),
        f_statistic,
        f_df: (k, df),
        f_p_value,
        residuals,
        fitted,
    })
}

/// Which observations a specification uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sample {
    /// Second-round documents without the overlap and earlier random ones.
    RoundTwo,
    RoundTwoWithOverlap,
    All,
}

impl Sample {
    fn mask(&self, data: &DataTable, spec: &RegressionSpec) -> Result<Vec<bool>, StatsError> {
        let vars: &[&str] = match self {
            Sample::RoundTwo => &[OVERLAP, OLD_RANDOM],
            Sample::RoundTwoWithOverlap => &[OLD_RANDOM],
            Sample::All => &[],
        };
        let mut keep = vec![true; data.n_rows()];
        for v in vars {
            for (k, x) in keep.iter_mut().zip(fetch(data, spec, v)?) {
                *k &= *x == 0.0;
            }
        }
        Ok(keep)
    }
}

/// Adds `index_sq` and `length_k` when their sources are present.
pub fn with_derived_columns(data: &DataTable) -> DataTable {
    let mut out = data.clone();
    if let (Some(index), None) = (data.column(INDEX), data.column(INDEX_SQ)) {
        let sq = index.iter().map(|v| v * v).collect();
        out.insert(INDEX_SQ, sq).expect("same length");
    }
    if let (Some(len), None) = (data.column(LENGTH), data.column(LENGTH_K)) {
        let k = len.iter().map(|v| v / 1000.0).collect();
        out.insert(LENGTH_K, k).expect("same length");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableColumn {
    pub label: String,
    pub sample: Sample,
    pub spec: RegressionSpec,
    pub fit: Result<RegressionFit, StatsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTable {
    pub title: String,
    pub columns: Vec<TableColumn>,
}

fn fit_column(data: &DataTable, label: &str, sample: Sample, spec: RegressionSpec) -> TableColumn {
    let fit = sample.mask(data, &spec).and_then(|mask| ols(&data.filter(&mask), &spec));
    TableColumn { label: label.to_string(), sample, spec, fit }
}

/// The six arm-effect specifications. Expects columns `fecundity`,
/// `ai_selected`, `overlap`, `old_random`, `index`, `round` and `length`.
pub fn treatment_table(data: &DataTable, robust: bool) -> RegressionTable {
    let data = with_derived_columns(data);
    let s = |n: &str, regs: &[&str]| RegressionSpec::new(n, FECUNDITY, regs).robust(robust);
    let columns = vec![
        fit_column(&data, "(1)", Sample::RoundTwo, s("(1)", &[AI_SELECTED])),
        fit_column(&data, "(2)", Sample::RoundTwoWithOverlap, s("(2)", &[AI_SELECTED])),
        fit_column(&data, "(3)", Sample::RoundTwo, s("(3)", &[AI_SELECTED, INDEX, INDEX_SQ])),
        fit_column(&data, "(4)", Sample::All, s("(4)", &[AI_SELECTED, ROUND])),
        fit_column(&data, "(5)", Sample::All, s("(5)", &[AI_SELECTED, ROUND, INDEX, INDEX_SQ])),
        fit_column(&data, "(6)", Sample::RoundTwo, s("(6)", &[AI_SELECTED]).weighted_by(LENGTH)),
    ];
    RegressionTable { title: "The effect of AI selection on fecundity".into(), columns }
}

/// Fecundity on text length, then adding AI code density, then the full
/// sample with a round dummy. Expects `ai_density` besides the arm columns.
pub fn length_table(data: &DataTable, robust: bool) -> RegressionTable {
    let data = with_derived_columns(data);
    let s = |n: &str, regs: &[&str]| RegressionSpec::new(n, FECUNDITY, regs).robust(robust);
    let columns = vec![
        fit_column(&data, "(1)", Sample::RoundTwo, s("(1)", &[LENGTH_K])),
        fit_column(&data, "(2)", Sample::RoundTwo, s("(2)", &[AI_DENSITY, LENGTH_K])),
        fit_column(&data, "(3)", Sample::All, s("(3)", &[AI_DENSITY, ROUND, LENGTH_K])),
    ];
    RegressionTable { title: "Fecundity and document length".into(), columns }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthResidualCheck {
    /// Length in thousands of characters on AI code density.
    pub stage1: RegressionFit,
    pub stage2: RegressionFit,
    /// True when the residuals were numerically zero and left out of stage 2.
    pub residual_dropped: bool,
}

impl LengthResidualCheck {
    pub fn table(&self) -> RegressionTable {
        RegressionTable {
            title: "The effect of AI selection on fecundity with length residuals".into(),
            columns: vec![TableColumn {
                label: "(1)".into(),
                sample: Sample::All,
                spec: self.stage2.spec.clone(),
                fit: Ok(self.stage2.clone()),
            }],
        }
    }
}

/// Two-stage check on the full sample: residuals of length on AI density are
/// added to the fifth arm-effect specification.
pub fn length_residual_check(data: &DataTable, robust: bool) -> Result<LengthResidualCheck, StatsError> {
    let mut data = with_derived_columns(data);
    let stage1_spec = RegressionSpec::new("stage 1", LENGTH_K, &[AI_DENSITY]).robust(robust);
    let stage1 = ols(&data, &stage1_spec)?;
    let scale = fetch(&data, &stage1_spec, LENGTH_K)?.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let degenerate = stage1.residuals.iter().all(|e| e.abs() <= 1e-9 * scale);
    let mut regs = vec![AI_SELECTED, ROUND, INDEX, INDEX_SQ];
    if degenerate {
        warn!("length is fully explained by AI code density; dropping the residual column");
    } else {
        data.insert(LENGTH_RESIDUAL, stage1.residuals.clone())?;
        regs.push(LENGTH_RESIDUAL);
    }
    let stage2 = ols(&data, &RegressionSpec::new("(1)", FECUNDITY, &regs).robust(robust))?;
    Ok(LengthResidualCheck { stage1, stage2, residual_dropped: degenerate })
}

/// Display label for a column name in rendered tables.
pub fn term_label(term: &str) -> &str {
    match term {
        CONSTANT => "Constant",
        AI_SELECTED => "AI-Selected",
        INDEX => "index",
        INDEX_SQ => "ind^2",
        ROUND => "Round",
        LENGTH_K => "Text Length (000's)",
        AI_DENSITY => "Predicted Fecundity",
        LENGTH_RESIDUAL => "Length Residuals",
        other => other,
    }
}

impl RegressionTable {
    /// Terms in order of first appearance, constant last.
    fn terms(&self) -> Vec<String> {
        let mut terms: Vec<String> = Vec::new();
        for col in &self.columns {
            for r in &col.spec.regressors {
                if !terms.contains(r) {
                    terms.push(r.clone());
                }
            }
        }
        terms.push(CONSTANT.to_string());
        terms
    }

    /// Aligned plain-text rendering in the usual regression-table layout.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let header: Vec<String> = std::iter::once(String::new()).chain(self.columns.iter().map(|c| c.label.clone())).collect();
        for term in self.terms() {
            let mut est = vec![term_label(&term).to_string()];
            let mut se = vec![String::new()];
            for col in &self.columns {
                match col.fit.as_ref().ok().and_then(|f| f.coef(&term)) {
                    Some(c) => {
                        est.push(format!("{:.3}{}", c.estimate, c.stars));
                        se.push(format!("({:.3})", c.std_error));
                    }
                    None => {
                        est.push(String::new());
                        se.push(String::new());
                    }
                }
            }
            rows.push(est);
            rows.push(se);
        }
        let summary: [(&str, fn(&RegressionFit) -> String); 5] = [
            ("Observations", |f| f.n_obs.to_string()),
            ("R²", |f| format!("{:.3}", f.r2)),
            ("Adjusted R²", |f| format!("{:.3}", f.adj_r2)),
            ("Residual Std. Error", |f| format!("{:.3} (df={})", f.residual_std_error, f.df_resid)),
            ("F Statistic", |f| match (f.f_statistic, f.f_p_value) {
                (Some(s), p) => format!("{:.3}{} (df={}; {})", s, stars(p.unwrap_or(1.0)), f.f_df.0, f.f_df.1),
                (None, _) => "n/a".to_string(),
            }),
        ];
        let mut footer: Vec<Vec<String>> = Vec::new();
        for (label, cell) in summary {
            let mut row = vec![label.to_string()];
            for col in &self.columns {
                row.push(match &col.fit {
                    Ok(f) => cell(f),
                    Err(_) => "n/a".to_string(),
                });
            }
            footer.push(row);
        }

        let ncols = header.len();
        let width = |i: usize| {
            std::iter::once(&header)
                .chain(&rows)
                .chain(&footer)
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..ncols).map(width).collect();
        let line = |r: &Vec<String>| {
            let mut s = format!("{:<w$}", r[0], w = widths[0]);
            for i in 1..ncols {
                let pad = widths[i] - r[i].chars().count();
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(&r[i]);
            }
            s.trim_end().to_string()
        };
        let total: usize = widths.iter().sum::<usize>() + 2 * (ncols - 1);
        let rule = "=".repeat(total);
        let thin = "-".repeat(total);

        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "Dependent variable: Fecundity");
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{thin}");
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        let _ = writeln!(out, "{thin}");
        for r in &footer {
            let _ = writeln!(out, "{}", line(r));
        }
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(out, "Note: *p<0.1; **p<0.05; ***p<0.01");
        for col in &self.columns {
            if let Err(e) = &col.fit {
                let _ = writeln!(out, "{} not estimated: {e}", col.label);
            }
        }
        out
    }

    /// One row per (column, term): label, term, estimate, std_error, t, p, stars.
    pub fn coefficients_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["spec", "term", "estimate", "std_error", "t_stat", "p_value", "stars"]).expect("in-memory");
        for col in &self.columns {
            if let Ok(f) = &col.fit {
                for c in &f.coefficients {
                    w.write_record([
                        col.label.as_str(),
                        c.term.as_str(),
                        &c.estimate.to_string(),
                        &c.std_error.to_string(),
                        &c.t_stat.to_string(),
                        &c.p_value.to_string(),
                        c.stars.as_str(),
                    ])
                    .expect("in-memory");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// One row per column with fit statistics, or the reason it was not estimated.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "spec", "sample", "n_obs", "r2", "adj_r2", "residual_std_error", "df_resid", "f_statistic", "f_p_value", "error",
        ])
        .expect("in-memory");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for col in &self.columns {
            let sample = serde_json::to_value(col.sample).expect("enum").as_str().unwrap_or_default().to_string();
            let row = match &col.fit {
                Ok(f) => vec![
                    col.label.clone(),
                    sample,
                    f.n_obs.to_string(),
                    f.r2.to_string(),
                    f.adj_r2.to_string(),
                    f.residual_std_error.to_string(),
                    f.df_resid.to_string(),
                    opt(f.f_statistic),
                    opt(f.f_p_value),
                    String::new(),
                ],
                Err(e) => {
                    let mut r = vec![col.label.clone(), sample];
                    r.extend(std::iter::repeat_n(String::new(), 7));
                    r.push(e.to_string());
                    r
                }
            };
            w.write_record(&row).expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

/// `a + b x + c x^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticMap {
    pub const IDENTITY: QuadraticMap = QuadraticMap { a: 0.0, b: 1.0, c: 0.0 };

    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x + self.c * x * x
    }
}

pub fn fit_quadratic(pairs: &[(f64, f64)]) -> Result<QuadraticMap, StatsError> {
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(StatsError::TooFewPoints(xs.len()));
    }
    let data = DataTable::new()
        .with_column("y", pairs.iter().map(|p| p.1).collect())?
        .with_column("x", pairs.iter().map(|p| p.0).collect())?
        .with_column("x_sq", pairs.iter().map(|p| p.0 * p.0).collect())?;
    let fit = ols(&data, &RegressionSpec::new("quadratic", "y", &["x", "x_sq"]))?;
    let e = |i: usize| fit.coefficients[i].estimate;
    Ok(QuadraticMap { a: e(0), b: e(1), c: e(2) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSize {
    Count(usize),
    Full,
}

impl SubsetSize {
    fn resolve(&self, n: usize) -> usize {
        match self {
            SubsetSize::Count(k) => *k,
            SubsetSize::Full => n,
        }
    }
}

pub struct SweepConfig {
    pub sizes: Vec<SubsetSize>,
    pub replicates: usize,
    /// Budget in mean document lengths of each sampled subset; also the
    /// size of the random baseline.
    pub budget_docs: usize,
    pub seed: u64,
    pub value_function: Arc<dyn ValueFunction>,
    pub ranking: Ranking,
}

impl SweepConfig {
    pub fn new(seed: u64, value_function: Arc<dyn ValueFunction>) -> Self {
        Self {
            sizes: [50, 100, 250, 500, 1000].into_iter().map(SubsetSize::Count).chain([SubsetSize::Full]).collect(),
            replicates: 10,
            budget_docs: 20,
            seed,
            value_function,
            ranking: Ranking::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub mean_ai_density: f64,
    pub predicted_human_density: f64,
    pub normalized_pct: f64,
    pub replicate_ai_density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub baseline: SweepRow,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,mean_ai_density,predicted_human_density,normalized_pct\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.size, r.mean_ai_density, r.predicted_human_density, r.normalized_pct);
        }
        out
    }
}

/// Mean AI code density of the greedy selection from one random subset.
fn replicate_density(
    full_set: &[&Document],
    coder_source: &str,
    size: usize,
    replicate: usize,
    config: &SweepConfig,
) -> Result<f64, StatsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64);
    let subset: Vec<&Document> = if size == full_set.len() {
        full_set.to_vec()
    } else {
        rand::seq::index::sample(&mut rng, full_set.len(), size).into_iter().map(|i| full_set[i]).collect()
    };
    let budget = SelectionBudget::mean_documents(subset.iter().copied(), config.budget_docs as f64);
    let request = SelectionRequest::new(subset.iter().copied(), budget, config.value_function.clone(), coder_source)
        .with_ranking(config.ranking);
    let selection = LazyGreedy.select(&request)?;
    let chosen: Vec<&Document> =
        subset.iter().copied().filter(|d| selection.selected_ids.iter().any(|s| s == &d.id)).collect();
    if chosen.is_empty() {
        return Ok(0.0);
    }
    let reports = corpus_fecundity(chosen.iter().copied(), coder_source)?;
    Ok(reports.iter().map(|r| r.fecundity).sum::<f64>() / reports.len() as f64)
}

fn sweep_row(
    full_set: &[&Document],
    coder_source: &str,
    size: usize,
    map: &QuadraticMap,
    config: &SweepConfig,
) -> Result<(SweepRow, f64), StatsError> {
    let densities: Vec<f64> = (0..config.replicates)
        .into_par_iter()
        .map(|r| replicate_density(full_set, coder_source, size, r, config))
        .collect::<Result<_, _>>()?;
    let reps = densities.len().max(1) as f64;
    let predicted = densities.iter().map(|&d| map.eval(d)).sum::<f64>() / reps;
    let row = SweepRow {
        size,
        mean_ai_density: densities.iter().sum::<f64>() / reps,
        predicted_human_density: predicted,
        normalized_pct: f64::NAN,
        replicate_ai_density: densities,
    };
    Ok((row, predicted))
}

/// Runs the greedy selector on seeded random subsets of each size and
/// reports predicted human fecundity relative to a random corpus of
/// `budget_docs` documents (selecting all of a subset that small).
/// Replicate `r` uses the same seed stream at every size.
pub fn superset_sweep(
    full_set: &[&Document],
    coder_source: &str,
    map: &QuadraticMap,
    config: &SweepConfig,
) -> Result<SweepResult, StatsError> {
    let n = full_set.len();
    let sizes: Vec<usize> = config.sizes.iter().map(|s| s.resolve(n)).collect();
    for &size in sizes.iter().chain([&config.budget_docs]) {
        if size > n {
            return Err(StatsError::SizeExceedsCorpus { size, available: n });
        }
    }
    let (mut baseline, base_pred) = sweep_row(full_set, coder_source, config.budget_docs, map, config)?;
    if !(base_pred.is_finite() && base_pred != 0.0) {
        return Err(StatsError::DegenerateBaseline(base_pred));
    }
    baseline.normalized_pct = 100.0;
    let rows = sizes
        .iter()
        .map(|&size| {
            let (mut row, pred) = sweep_row(full_set, coder_source, size, map, config)?;
            row.normalized_pct = 100.0 * pred / base_pred;
            Ok(row)
        })
        .collect::<Result<_, StatsError>>()?;
    Ok(SweepResult { baseline, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SqrtValue;

    fn table(cols: &[(&str, Vec<f64>)]) -> DataTable {
        cols.iter().fold(DataTable::new(), |t, (n, v)| t.with_column(n, v.clone()).unwrap())
    }

    #[test]
    fn perfect_fit() {
        let d = table(&[("y", vec![0., 2., 4., 6., 8.]), ("x", vec![0., 1., 2., 3., 4.])]);
        let f = ols(&d, &RegressionSpec::new("t", "y", &["x"])).unwrap();
        assert!((f.coef("x").unwrap().estimate - 2.0).abs() < 1e-12);
        assert_eq!(f.r2, 1.0);
        assert!(f.residual_std_error < 1e-12);
    }

    #[test]
    fn hand_solved_four_points() {
        let d = table(&[("y", vec![1., 2., 2., 3.]), ("x", vec![0., 0., 1., 1.])]);
        let f = ols(&d, &RegressionSpec::new("t", "y", &["x"])).unwrap();
        assert!((f.coefficients[0].estimate - 1.5).abs() < 1e-12);
        assert!((f.coefficients[1].estimate - 1.0).abs() < 1e-12);
        // RSS = 4 * 0.25 = 1, sigma^2 = 1/2; Var(slope) = sigma^2 / Sxx = 0.5 / 1.
        assert!((f.coefficients[1].std_error - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((f.r2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_outcome() {
        let d = table(&[("y", vec![3.; 6]), ("x", vec![1., 5., 2., 8., 3., 0.])]);
        let f = ols(&d, &RegressionSpec::new("t", "y", &["x"])).unwrap();
        assert!(f.coef("x").unwrap().estimate.abs() < 1e-12);
        assert_eq!(f.r2, 0.0);
        assert!(f.f_statistic.is_none());
    }

    #[test]
    fn collinear_columns_are_named() {
        let d = table(&[("y", vec![1., 2., 3., 5.]), ("a", vec![1., 2., 3., 4.]), ("b", vec![2., 4., 6., 8.])]);
        let err = ols(&d, &RegressionSpec::new("t", "y", &["a", "b"])).unwrap_err();
        assert_eq!(err, StatsError::RankDeficient { column: "b".into(), with: vec!["const".into(), "a".into()] });
        assert!(err.to_string().contains("`b`"));
        let d = table(&[("y", vec![1., 2., 3., 5.]), ("r", vec![1.; 4])]);
        assert!(matches!(ols(&d, &RegressionSpec::new("t", "y", &["r"])), Err(StatsError::RankDeficient { .. })));
    }

    #[test]
    fn bad_inputs() {
        let d = table(&[("y", vec![1., 2., 3.]), ("x", vec![0., 1., 3.]), ("w", vec![1., 0., 1.])]);
        assert!(matches!(
            ols(&d, &RegressionSpec::new("t", "y", &["x"]).weighted_by("w")),
            Err(StatsError::NonPositiveWeight { row: 1, .. })
        ));
        assert_eq!(
            ols(&d, &RegressionSpec::new("t", "y", &["zz"])).unwrap_err(),
            StatsError::MissingVariable { spec: "t".into(), variable: "zz".into() }
        );
        assert!(matches!(
            ols(&d, &RegressionSpec::new("t", "y", &["x", "w"])),
            Err(StatsError::TooFewObservations { .. })
        ));
        assert!(ols(&d, &RegressionSpec::new("t", "y", &["y"])).is_err());
    }

    #[test]
    fn hc1_differs_only_in_errors() {
        let d = table(&[("y", vec![1., 2.5, 2., 4., 7., 6.]), ("x", vec![0., 1., 2., 3., 4., 5.])]);
        let a = ols(&d, &RegressionSpec::new("t", "y", &["x"])).unwrap();
        let b = ols(&d, &RegressionSpec::new("t", "y", &["x"]).robust(true)).unwrap();
        assert_eq!(a.coefficients[1].estimate, b.coefficients[1].estimate);
        assert_ne!(a.coefficients[1].std_error, b.coefficients[1].std_error);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.01), "**");
        assert_eq!(stars(0.049), "**");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.1), "");
    }

    #[test]
    fn p_values_match_reference_quantiles() {
        // t = 2.228 is the 97.5% quantile of t(10); 1.96 for the normal.
        assert!((two_sided_p(2.228_138_85, 10.0) - 0.05).abs() < 1e-6);
        assert!((two_sided_p(1.959_963_985, 500.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn quadratic_examples() {
        let sq: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64)).collect();
        let m = fit_quadratic(&sq).unwrap();
        assert!(m.a.abs() < 1e-9 && m.b.abs() < 1e-9 && (m.c - 1.0).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 3.0)).collect();
        let m = fit_quadratic(&flat).unwrap();
        assert!((m.a - 3.0).abs() < 1e-9 && m.b.abs() < 1e-9 && m.c.abs() < 1e-9);
        assert_eq!(fit_quadratic(&[(1.0, 1.0), (1.0, 2.0), (2.0, 0.0)]), Err(StatsError::TooFewPoints(2)));
    }

    #[test]
    fn noisy_quadratic_matches_normal_equations() {
        let pts = [(-2.0, 4.3), (-1.0, 0.8), (0.0, 0.1), (1.0, 1.2), (2.0, 3.9)];
        // Symmetric x: S0=5, S2=10, S4=34. Normal equations decouple:
        // b = Sxy/S2; [5 10; 10 34][a c] = [Sy, Sx2y].
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let sx2y: f64 = pts.iter().map(|p| p.0 * p.0 * p.1).sum();
        let det = 5.0 * 34.0 - 100.0;
        let a = (34.0 * sy - 10.0 * sx2y) / det;
        let c = (5.0 * sx2y - 10.0 * sy) / det;
        let m = fit_quadratic(&pts).unwrap();
        assert!((m.a - a).abs() < 1e-12);
        assert!((m.b - sxy / 10.0).abs() < 1e-12);
        assert!((m.c - c).abs() < 1e-12);
    }

    fn arm_fixture() -> DataTable {
        let n = 20;
        let ai: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let fec: Vec<f64> = (0..n).map(|i| 1.0 + ai[i] + ((i * 7) % 5) as f64 * 0.1).collect();
        table(&[
            (FECUNDITY, fec),
            (AI_SELECTED, ai),
            (OVERLAP, (0..n).map(|i| (i == 3) as u8 as f64).collect()),
            (OLD_RANDOM, (0..n).map(|i| (i >= 16) as u8 as f64).collect()),
            (INDEX, (1..=n).map(|i| i as f64).collect()),
            (ROUND, (0..n).map(|i| (i < 16) as u8 as f64).collect()),
            (LENGTH, (0..n).map(|i| 1000.0 + 37.0 * i as f64).collect()),
            (AI_DENSITY, (0..n).map(|i| 0.5 + ((i * 3) % 7) as f64 * 0.2).collect()),
        ])
    }

    #[test]
    fn treatment_table_samples_and_regressors() {
        let t = treatment_table(&arm_fixture(), false);
        let n: Vec<usize> = t.columns.iter().map(|c| c.fit.as_ref().unwrap().n_obs).collect();
        assert_eq!(n, vec![15, 16, 15, 20, 20, 15]);
        let regs: Vec<usize> = t.columns.iter().map(|c| c.fit.as_ref().unwrap().coefficients.len()).collect();
        assert_eq!(regs, vec![2, 2, 4, 3, 5, 2]);
        assert_eq!(t.columns[5].spec.weights.as_deref(), Some(LENGTH));
        let text = t.render_text();
        assert!(text.contains("AI-Selected") && text.contains("ind^2") && text.contains("Note: *p<0.1"));
    }

    #[test]
    fn missing_variable_names_spec() {
        let mut d = DataTable::new();
        for name in [FECUNDITY, AI_SELECTED, OVERLAP, OLD_RANDOM, LENGTH] {
            d.insert(name, arm_fixture().column(name).unwrap().to_vec()).unwrap();
        }
        let t = treatment_table(&d, false);
        assert!(t.columns[0].fit.is_ok());
        assert_eq!(
            t.columns[2].fit.as_ref().unwrap_err(),
            &StatsError::MissingVariable { spec: "(3)".into(), variable: INDEX.into() }
        );
        assert!(t.render_text().contains("(3) not estimated: specification (3): missing variable `index`"));
    }

    #[test]
    fn length_residuals_orthogonal_and_degenerate_case() {
        let d = arm_fixture();
        let check = length_residual_check(&d, false).unwrap();
        let dot: f64 = check.stage1.residuals.iter().zip(&check.stage1.fitted).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
        assert!(check.stage2.coef(LENGTH_RESIDUAL).is_some());

        let mut exact = d.clone();
        let dens: Vec<f64> = d.column(LENGTH).unwrap().iter().map(|l| l / 500.0).collect();
        exact.insert(AI_DENSITY, dens).unwrap();
        let check = length_residual_check(&exact, false).unwrap();
        assert!(check.residual_dropped);
        assert!(check.stage2.coef(LENGTH_RESIDUAL).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let d = arm_fixture();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        d.write_csv(&p).unwrap();
        assert_eq!(DataTable::read_csv(&p).unwrap(), d);
    }

    fn unit_docs(n: usize) -> Vec<Document> {
        (0..n).map(|i| Document::new(format!("d{i:04}"), 100).unwrap().with_code_ids("ai", [i as u32])).collect()
    }

    #[test]
    fn sweep_constant_density_is_flat() {
        let docs = unit_docs(120);
        let refs: Vec<&Document> = docs.iter().collect();
        let mut cfg = SweepConfig::new(5, Arc::new(SqrtValue));
        cfg.sizes = vec![SubsetSize::Count(20), SubsetSize::Count(50), SubsetSize::Full];
        cfg.replicates = 3;
        let r = superset_sweep(&refs, "ai", &QuadraticMap::IDENTITY, &cfg).unwrap();
        for row in &r.rows {
            assert!((row.normalized_pct - 100.0).abs() < 1e-9, "{row:?}");
        }
        cfg.sizes = vec![SubsetSize::Count(121)];
        assert_eq!(
            superset_sweep(&refs, "ai", &QuadraticMap::IDENTITY, &cfg).unwrap_err(),
            StatsError::SizeExceedsCorpus { size: 121, available: 120 }
        );
    }
}
