//! Design matrices and quadratic penalties for additive predictors.
//!
//! A predictor is a list of terms. Each term contributes a block of columns
//! and a penalty matrix over those columns:
//!
//! | term              | columns                                  | penalty  |
//! |-------------------|------------------------------------------|----------|
//! | `intercept`       | one column of ones                       | 0        |
//! | `linear(x)`       | x                                        | 0        |
//! | `factor(f)`       | dummies, first level dropped             | 0        |
//! | `s(x, k)`         | cubic B-splines, k functions             | D₂ᵀD₂    |
//! | `re(f)`           | dummies for every level                  | I        |
//!
//! When the predictor has an intercept, smooths are reparameterized to
//! satisfy a sum-to-zero constraint over the data rows (k − 1 columns), so
//! the constant is not counted twice. Level order is class order for `size`
//! and lexicographic for everything else.
//!
//! The fit-time encoding of every term (levels, knot range, constraint) is
//! kept in a [`DesignRecipe`] so the same predictor can be evaluated on a
//! different table, e.g. the full population.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Column, CountTable};
use crate::error::{Error, Result};

pub const DEFAULT_BASIS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TermSpec {
    Intercept,
    Linear(String),
    Factor(String),
    Smooth { covariate: String, n_basis: usize },
    RandomEffect(String),
}

impl TermSpec {
    pub fn covariate(&self) -> Option<&str> {
        match self {
            TermSpec::Intercept => None,
            TermSpec::Linear(c) | TermSpec::Factor(c) | TermSpec::RandomEffect(c) => Some(c),
            TermSpec::Smooth { covariate, .. } => Some(covariate),
        }
    }

    pub fn is_penalized(&self) -> bool {
        matches!(self, TermSpec::Smooth { .. } | TermSpec::RandomEffect(_))
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermSpec::Intercept => write!(f, "intercept"),
            TermSpec::Linear(c) => write!(f, "linear({c})"),
            TermSpec::Factor(c) => write!(f, "factor({c})"),
            TermSpec::Smooth { covariate, n_basis } => write!(f, "s({covariate}, {n_basis})"),
            TermSpec::RandomEffect(c) => write!(f, "re({c})"),
        }
    }
}

impl FromStr for TermSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        if lower == "intercept" || lower == "1" {
            return Ok(TermSpec::Intercept);
        }
        let open = s.find('(');
        let (head, inner) = match (open, s.ends_with(')')) {
            (Some(i), true) => (lower[..i].trim().to_string(), s[i + 1..s.len() - 1].trim()),
            _ => return Err(Error::Config(format!("cannot parse term `{s}`"))),
        };
        let mut args = inner.split(',').map(str::trim);
        let name = args
            .next()
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Config(format!("term `{s}` names no covariate")))?;
        let name = name.to_ascii_lowercase();
        let extra: Vec<&str> = args.collect();
        let no_extra = |t: TermSpec| {
            if extra.is_empty() {
                Ok(t)
            } else {
                Err(Error::Config(format!("term `{s}` takes a single argument")))
            }
        };
        match head.as_str() {
            "linear" | "lin" => no_extra(TermSpec::Linear(name)),
            "factor" => no_extra(TermSpec::Factor(name)),
            "re" => no_extra(TermSpec::RandomEffect(name)),
            "s" | "smooth" => {
                let n_basis = match extra.as_slice() {
                    [] => DEFAULT_BASIS,
                    [k] => k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad basis size in `{s}`")))?,
                    _ => return Err(Error::Config(format!("term `{s}` has too many arguments"))),
                };
                Ok(TermSpec::Smooth {
                    covariate: name,
                    n_basis,
                })
            }
            other => Err(Error::Config(format!(
                "unknown term type `{other}` in `{s}`"
            ))),
        }
    }
}

impl TryFrom<String> for TermSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TermSpec> for String {
    fn from(t: TermSpec) -> String {
        t.to_string()
    }
}

/// Row-compressed design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesign {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseDesign {
    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    #[inline]
    pub fn row_dot(&self, r: usize, beta: &[f64]) -> f64 {
        let (c, v) = self.row(r);
        c.iter().zip(v).map(|(&j, &x)| x * beta[j]).sum()
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.ncols, "coefficient length mismatch");
        (0..self.nrows()).map(|r| self.row_dot(r, beta)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            let (c, v) = self.row(r);
            for (&j, &x) in c.iter().zip(v) {
                m[(r, j)] += x;
            }
        }
        m
    }
}

/// Columns of one term.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockColumns {
    Dense(DMatrix<f64>),
    /// One active column per row (or none for a reference level).
    Indicator {
        ncols: usize,
        index: Vec<Option<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlock {
    pub term: TermSpec,
    pub columns: BlockColumns,
    pub penalty: DMatrix<f64>,
}

impl DesignBlock {
    pub fn ncols(&self) -> usize {
        match &self.columns {
            BlockColumns::Dense(m) => m.ncols(),
            BlockColumns::Indicator { ncols, .. } => *ncols,
        }
    }

    pub fn nrows(&self) -> usize {
        match &self.columns {
            BlockColumns::Dense(m) => m.nrows(),
            BlockColumns::Indicator { index, .. } => index.len(),
        }
    }

    pub fn is_penalized(&self) -> bool {
        self.penalty.iter().any(|&v| v != 0.0)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.columns {
            BlockColumns::Dense(m) => m.clone(),
            BlockColumns::Indicator { ncols, index } => {
                let mut m = DMatrix::zeros(index.len(), *ncols);
                for (r, j) in index.iter().enumerate() {
                    if let Some(j) = j {
                        m[(r, *j)] = 1.0;
                    }
                }
                m
            }
        }
    }

    /// This block's contribution Zβ to the predictor.
    pub fn eta(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.ncols());
        match &self.columns {
            BlockColumns::Dense(m) => (m * DVector::from_column_slice(beta)).as_slice().to_vec(),
            BlockColumns::Indicator { index, .. } => index
                .iter()
                .map(|j| j.map(|j| beta[j]).unwrap_or(0.0))
                .collect(),
        }
    }
}

/// Fit-time encoding of a term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermEncoding {
    Intercept,
    Linear {
        covariate: String,
    },
    Factor {
        covariate: String,
        /// All levels; the first is the reference and has no column.
        levels: Vec<String>,
    },
    Smooth {
        covariate: String,
        n_basis: usize,
        lower: f64,
        upper: f64,
        /// Sum-to-zero reparameterization (n_basis × (n_basis − 1)), if any.
        constraint: Option<DMatrix<f64>>,
    },
    RandomEffect {
        factor: String,
        levels: Vec<String>,
    },
}

impl TermEncoding {
    pub fn term(&self) -> TermSpec {
        match self {
            TermEncoding::Intercept => TermSpec::Intercept,
            TermEncoding::Linear { covariate } => TermSpec::Linear(covariate.clone()),
            TermEncoding::Factor { covariate, .. } => TermSpec::Factor(covariate.clone()),
            TermEncoding::Smooth {
                covariate, n_basis, ..
            } => TermSpec::Smooth {
                covariate: covariate.clone(),
                n_basis: *n_basis,
            },
            TermEncoding::RandomEffect { factor, .. } => TermSpec::RandomEffect(factor.clone()),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            TermEncoding::Intercept | TermEncoding::Linear { .. } => 1,
            TermEncoding::Factor { levels, .. } => levels.len() - 1,
            TermEncoding::Smooth {
                n_basis,
                constraint,
                ..
            } => constraint.as_ref().map(|z| z.ncols()).unwrap_or(*n_basis),
            TermEncoding::RandomEffect { levels, .. } => levels.len(),
        }
    }

    /// Human-readable names of this term's columns.
    pub fn column_labels(&self) -> Vec<String> {
        match self {
            TermEncoding::Intercept => vec!["(Intercept)".into()],
            TermEncoding::Linear { covariate } => vec![covariate.clone()],
            TermEncoding::Factor { covariate, levels } => levels[1..]
                .iter()
                .map(|l| format!("{covariate}:{l}"))
                .collect(),
            TermEncoding::Smooth { covariate, .. } => (1..=self.ncols())
                .map(|i| format!("s({covariate}).{i}"))
                .collect(),
            TermEncoding::RandomEffect { factor, levels } => {
                levels.iter().map(|l| format!("re({factor}):{l}")).collect()
            }
        }
    }
}

/// Everything needed to rebuild a predictor's design on any table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecipe {
    pub terms: Vec<TermEncoding>,
}

impl DesignRecipe {
    pub fn ncols(&self) -> usize {
        self.terms.iter().map(TermEncoding::ncols).sum()
    }

    pub fn column_labels(&self) -> Vec<String> {
        self.terms
            .iter()
            .flat_map(TermEncoding::column_labels)
            .collect()
    }

    pub fn slices(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.terms
            .iter()
            .map(|t| {
                let r = start..start + t.ncols();
                start = r.end;
                r
            })
            .collect()
    }

    /// Builds the predictor on `table` using the stored encodings. Levels not
    /// seen at fit time are an error.
    pub fn build(&self, table: &CountTable) -> Result<Predictor> {
        let blocks = self
            .terms
            .iter()
            .map(|enc| encode_block(enc, table))
            .collect::<Result<Vec<_>>>()?;
        Ok(Predictor::assemble(self.clone(), blocks, table.len()))
    }
}

/// The stacked design Z = [Z₁ | … | Z_K] of one equation.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub recipe: DesignRecipe,
    pub blocks: Vec<DesignBlock>,
    pub coefficient_slices: Vec<Range<usize>>,
    design: SparseDesign,
}

impl Predictor {
    fn assemble(recipe: DesignRecipe, blocks: Vec<DesignBlock>, nrows: usize) -> Predictor {
        let coefficient_slices = recipe.slices();
        let ncols = recipe.ncols();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..nrows {
            for (block, slice) in blocks.iter().zip(&coefficient_slices) {
                match &block.columns {
                    BlockColumns::Dense(m) => {
                        for j in 0..m.ncols() {
                            let v = m[(r, j)];
                            if v != 0.0 {
                                cols.push(slice.start + j);
                                vals.push(v);
                            }
                        }
                    }
                    BlockColumns::Indicator { index, .. } => {
                        if let Some(j) = index[r] {
                            cols.push(slice.start + j);
                            vals.push(1.0);
                        }
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Predictor {
            recipe,
            blocks,
            coefficient_slices,
            design: SparseDesign {
                ncols,
                row_ptr,
                cols,
                vals,
            },
        }
    }

    pub fn ncols(&self) -> usize {
        self.design.ncols
    }

    pub fn nrows(&self) -> usize {
        self.design.nrows()
    }

    pub fn design(&self) -> &SparseDesign {
        &self.design
    }

    /// η = Zβ.
    pub fn eta(&self, beta: &[f64]) -> Vec<f64> {
        self.design.mul_vec(beta)
    }

    /// Penalized blocks as (coefficient range, penalty matrix).
    pub fn penalties(&self) -> Vec<(Range<usize>, &DMatrix<f64>)> {
        self.blocks
            .iter()
            .zip(&self.coefficient_slices)
            .filter(|(b, _)| b.is_penalized())
            .map(|(b, r)| (r.clone(), &b.penalty))
            .collect()
    }
}

/// Builds the design of `terms` on `data`, fixing all encodings.
pub fn build_design(terms: &[TermSpec], data: &CountTable) -> Result<Predictor> {
    let recipe = design_recipe(terms, data)?;
    recipe.build(data)
}

/// Determines the fit-time encodings of `terms` on `data`.
pub fn design_recipe(terms: &[TermSpec], data: &CountTable) -> Result<DesignRecipe> {
    if terms.is_empty() {
        return Err(Error::Design("an equation needs at least one term".into()));
    }
    for (i, t) in terms.iter().enumerate() {
        if terms[..i].contains(t) {
            return Err(Error::Design(format!("term `{t}` listed twice")));
        }
    }
    let has_intercept = terms.contains(&TermSpec::Intercept);
    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        let enc = match term {
            TermSpec::Intercept => TermEncoding::Intercept,
            TermSpec::Linear(c) => {
                numeric_column(data, c, term)?;
                TermEncoding::Linear {
                    covariate: c.clone(),
                }
            }
            TermSpec::Factor(c) | TermSpec::RandomEffect(c) => {
                let (_, levels) = categorical_column(data, c, term)?;
                if levels.len() < 2 {
                    return Err(Error::Design(format!(
                        "`{term}` needs at least two levels, found {}",
                        levels.len()
                    )));
                }
                if matches!(term, TermSpec::Factor(_)) {
                    TermEncoding::Factor {
                        covariate: c.clone(),
                        levels,
                    }
                } else {
                    TermEncoding::RandomEffect {
                        factor: c.clone(),
                        levels,
                    }
                }
            }
            TermSpec::Smooth { covariate, n_basis } => {
                let x = numeric_column(data, covariate, term)?;
                let raw = spline_basis(&x, *n_basis)?;
                let (lower, upper) = range_of(&x);
                let constraint = if has_intercept {
                    Some(sum_to_zero_constraint(&raw.matrix()))
                } else {
                    None
                };
                TermEncoding::Smooth {
                    covariate: covariate.clone(),
                    n_basis: *n_basis,
                    lower,
                    upper,
                    constraint,
                }
            }
        };
        out.push(enc);
    }
    Ok(DesignRecipe { terms: out })
}

fn numeric_column(data: &CountTable, name: &str, term: &TermSpec) -> Result<Vec<f64>> {
    if !data.has_column(name) {
        return Err(Error::UnknownCovariate(name.to_string()));
    }
    match data.column(name)? {
        Column::Numeric(v) => Ok(v),
        Column::Categorical { .. } => Err(Error::Design(format!(
            "`{term}` needs a numeric covariate but `{name}` is categorical"
        ))),
    }
}

fn categorical_column(
    data: &CountTable,
    name: &str,
    term: &TermSpec,
) -> Result<(Vec<String>, Vec<String>)> {
    if !data.has_column(name) {
        return Err(Error::UnknownCovariate(name.to_string()));
    }
    match data.column(name)? {
        Column::Categorical { values, levels } => {
            Ok((values, CountTable::level_order(name, levels)))
        }
        Column::Numeric(_) => Err(Error::Design(format!(
            "`{term}` needs a categorical covariate but `{name}` is numeric"
        ))),
    }
}

fn encode_block(enc: &TermEncoding, table: &CountTable) -> Result<DesignBlock> {
    let term = enc.term();
    let n = table.len();
    let block = match enc {
        TermEncoding::Intercept => DesignBlock {
            term,
            columns: BlockColumns::Dense(DMatrix::from_element(n, 1, 1.0)),
            penalty: DMatrix::zeros(1, 1),
        },
        TermEncoding::Linear { covariate } => {
            let x = numeric_column(table, covariate, &term)?;
            DesignBlock {
                term,
                columns: BlockColumns::Dense(DMatrix::from_column_slice(n, 1, &x)),
                penalty: DMatrix::zeros(1, 1),
            }
        }
        TermEncoding::Factor { covariate, levels } => {
            let (values, _) = categorical_column(table, covariate, &term)?;
            let index = level_indices(&values, levels, covariate)?
                .into_iter()
                .map(|i| i.checked_sub(1))
                .collect();
            let k = levels.len() - 1;
            DesignBlock {
                term,
                columns: BlockColumns::Indicator { ncols: k, index },
                penalty: DMatrix::zeros(k, k),
            }
        }
        TermEncoding::RandomEffect { factor, levels } => {
            let (values, _) = categorical_column(table, factor, &term)?;
            let index = level_indices(&values, levels, factor)?
                .into_iter()
                .map(Some)
                .collect();
            random_effect_from_index(term, levels.len(), index)
        }
        TermEncoding::Smooth {
            covariate,
            n_basis,
            lower,
            upper,
            constraint,
        } => {
            let x = numeric_column(table, covariate, &term)?;
            let raw = bspline_matrix(&x, *n_basis, *lower, *upper);
            let penalty = second_difference_penalty(*n_basis);
            match constraint {
                Some(z) => DesignBlock {
                    term,
                    columns: BlockColumns::Dense(&raw * z),
                    penalty: z.transpose() * penalty * z,
                },
                None => DesignBlock {
                    term,
                    columns: BlockColumns::Dense(raw),
                    penalty,
                },
            }
        }
    };
    Ok(block)
}

fn level_indices(values: &[String], levels: &[String], name: &str) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            levels.iter().position(|l| l == v).ok_or_else(|| {
                Error::Design(format!(
                    "level `{v}` of `{name}` was not seen when the model was fitted"
                ))
            })
        })
        .collect()
}

fn range_of(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Cubic B-spline basis with `n_basis` functions and equally spaced knots over
/// [min x, max x], with the second-difference penalty D₂ᵀD₂. Rows sum to one.
pub fn spline_basis(x: &[f64], n_basis: usize) -> Result<DesignBlock> {
    if n_basis < 4 {
        return Err(Error::Design(format!(
            "smooth needs n_basis ≥ 4, got {n_basis}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Design(
            "smooth covariate has non-finite values".into(),
        ));
    }
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < n_basis {
        return Err(Error::Design(format!(
            "smooth with {n_basis} basis functions needs at least {n_basis} distinct values, found {}",
            distinct.len()
        )));
    }
    let (lo, hi) = range_of(x);
    Ok(DesignBlock {
        term: TermSpec::Smooth {
            covariate: String::new(),
            n_basis,
        },
        columns: BlockColumns::Dense(bspline_matrix(x, n_basis, lo, hi)),
        penalty: second_difference_penalty(n_basis),
    })
}

/// Basis values at each x (clamped into [lo, hi]).
fn bspline_matrix(x: &[f64], n_basis: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    const DEG: usize = 3;
    let intervals = n_basis - DEG;
    let h = (hi - lo) / intervals as f64;
    let knot = |j: usize| lo + (j as f64 - DEG as f64) * h;
    let mut m = DMatrix::zeros(x.len(), n_basis);
    for (r, &xv) in x.iter().enumerate() {
        let xv = xv.clamp(lo, hi);
        let span = if h > 0.0 {
            (((xv - lo) / h).floor() as usize).min(intervals - 1) + DEG
        } else {
            DEG
        };
        // Cox–de Boor triangle for the DEG + 1 non-zero functions.
        let mut vals = [0.0f64; DEG + 1];
        let mut left = [0.0f64; DEG + 1];
        let mut right = [0.0f64; DEG + 1];
        vals[0] = 1.0;
        for j in 1..=DEG {
            left[j] = xv - knot(span + 1 - j);
            right[j] = knot(span + j) - xv;
            let mut saved = 0.0;
            for k in 0..j {
                let temp = vals[k] / (right[k + 1] + left[j - k]);
                vals[k] = saved + right[k + 1] * temp;
                saved = left[j - k] * temp;
            }
            vals[j] = saved;
        }
        for (k, v) in vals.iter().enumerate() {
            m[(r, span - DEG + k)] = *v;
        }
    }
    m
}

fn second_difference_penalty(k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(k - 2, k);
    for i in 0..k - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Null-space basis Z (k × (k − 1)) of the column sums of `x`, from a
/// Householder reflection, so that 1ᵀ(XZ) = 0.
fn sum_to_zero_constraint(x: &DMatrix<f64>) -> DMatrix<f64> {
    let k = x.ncols();
    let c: DVector<f64> = x.row_sum().transpose();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

/// L indicator columns (no reference level) with an identity penalty.
pub fn random_effect_block(values: &[String]) -> Result<DesignBlock> {
    let levels = CountTable::level_order("", values.to_vec());
    if levels.len() < 2 {
        return Err(Error::Design(format!(
            "random effect needs at least two levels, found {}",
            levels.len()
        )));
    }
    let index = level_indices(values, &levels, "random effect")?
        .into_iter()
        .map(Some)
        .collect();
    Ok(random_effect_from_index(
        TermSpec::RandomEffect(String::new()),
        levels.len(),
        index,
    ))
}

fn random_effect_from_index(term: TermSpec, l: usize, index: Vec<Option<usize>>) -> DesignBlock {
    DesignBlock {
        term,
        columns: BlockColumns::Indicator { ncols: l, index },
        penalty: DMatrix::identity(l, l),
    }
}
