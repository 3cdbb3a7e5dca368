//! The copula sample-selection model for a binary outcome.
//!
//! Each row of a count table falls into one of three cells:
//!
//! * not selected: probability p0 = 1 − π₁
//! * selected, outcome 1: p11 = C(π₁, π₂; θ)
//! * selected, outcome 0: p10 = π₁ − p11
//!
//! with πⱼ = 1 − Fⱼ(−ηⱼ). The outcome is never observed for unselected
//! rows, so only these three cells enter the likelihood.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{clamp_edge, CopulaFamily, CopulaSpec, UnconstrainedTheta};
use crate::data::CountTable;
use crate::design::{design_recipe, DesignRecipe, Predictor, TermSpec};
use crate::error::{Error, Result};
use crate::estimators::gh_prevalence;
use crate::glm::fit_binary_glm;
use crate::linalg::{nearest_psd, solve_spd_with_ridge, spd_inverse, symmetrize};
use crate::links::{clamp_prob, LinkFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub selection_terms: Vec<TermSpec>,
    pub outcome_terms: Vec<TermSpec>,
    pub selection_link: LinkFunction,
    pub outcome_link: LinkFunction,
    pub copula: CopulaFamily,
}

impl ModelSpec {
    /// Identification warnings; none of these stop a fit.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self
            .selection_terms
            .iter()
            .all(|t| self.outcome_terms.contains(t))
        {
            out.push(
                "every selection term also appears in the outcome equation; \
                 identification then rests on functional form alone"
                    .to_string(),
            );
        }
        out
    }

    pub fn with(
        &self,
        copula: CopulaFamily,
        selection_link: LinkFunction,
        outcome_link: LinkFunction,
    ) -> ModelSpec {
        ModelSpec {
            copula,
            selection_link,
            outcome_link,
            ..self.clone()
        }
    }
}

/// δ = (β₁, β₂, θ*). The flat layout is [β₁ | β₂ | θ*].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub theta_star: UnconstrainedTheta,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.beta1.len() + self.beta2.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.beta1);
        v.extend_from_slice(&self.beta2);
        v.push(self.theta_star.0);
        v
    }

    pub fn from_slice(flat: &[f64], p1: usize, p2: usize) -> ParamVector {
        assert_eq!(flat.len(), p1 + p2 + 1, "parameter length mismatch");
        ParamVector {
            beta1: flat[..p1].to_vec(),
            beta2: flat[p1..p1 + p2].to_vec(),
            theta_star: UnconstrainedTheta(flat[p1 + p2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbabilities {
    pub p0: f64,
    pub p10: f64,
    pub p11: f64,
}

/// Cell probabilities at linear predictors (η₁, η₂).
pub fn cell_probabilities(
    eta1: f64,
    eta2: f64,
    selection_link: LinkFunction,
    outcome_link: LinkFunction,
    copula: &CopulaSpec,
) -> CellProbabilities {
    let pi1 = selection_link.prob_one(eta1);
    let pi2 = outcome_link.prob_one(eta2);
    let p11 = copula.cdf_unchecked(pi1, pi2);
    CellProbabilities {
        p0: selection_link.prob_zero(eta1),
        p10: (pi1 - p11).max(0.0),
        p11,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Unselected,
    Selected { informal: bool },
}

/// A model specification bound to a table: designs, cells and counts.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    spec: ModelSpec,
    z1: Predictor,
    /// Outcome design over the selected rows only.
    z2: Predictor,
    cells: Vec<Cell>,
    counts: Vec<f64>,
    outcome_row: Vec<Option<usize>>,
    penalty_blocks: Vec<PenaltyBlock>,
    n_total: f64,
}

#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub label: String,
    pub range: Range<usize>,
    pub matrix: DMatrix<f64>,
}

impl SelectionProblem {
    pub fn new(spec: &ModelSpec, data: &CountTable) -> Result<SelectionProblem> {
        if data.is_empty() {
            return Err(Error::Data("cannot fit a model to an empty table".into()));
        }
        let selected = data.filter(|r| r.selected);
        let r1 = design_recipe(&spec.selection_terms, data)?;
        let r2 = if selected.is_empty() {
            return Err(Error::Data(
                "no selected rows: the outcome equation has no data".into(),
            ));
        } else {
            design_recipe(&spec.outcome_terms, &selected)?
        };
        Self::with_recipes(spec, r1, r2, data)
    }

    /// Binds fixed design encodings (e.g. from an earlier fit) to `data`.
    pub fn with_recipes(
        spec: &ModelSpec,
        selection: DesignRecipe,
        outcome: DesignRecipe,
        data: &CountTable,
    ) -> Result<SelectionProblem> {
        let selected = data.filter(|r| r.selected);
        let z1 = selection.build(data)?;
        let z2 = outcome.build(&selected)?;
        let mut cells = Vec::with_capacity(data.len());
        let mut outcome_row = Vec::with_capacity(data.len());
        let mut k = 0;
        for row in data.rows() {
            if row.selected {
                let informal = row.informal.ok_or_else(|| {
                    Error::Data(format!(
                        "selected row ({}, {}, {}) has no informal status",
                        row.district, row.industry, row.size
                    ))
                })?;
                cells.push(Cell::Selected { informal });
                outcome_row.push(Some(k));
                k += 1;
            } else {
                cells.push(Cell::Unselected);
                outcome_row.push(None);
            }
        }
        let p1 = z1.ncols();
        let mut penalty_blocks = Vec::new();
        for (eq, z, offset) in [("selection", &z1, 0), ("outcome", &z2, p1)] {
            for (block, range) in z.blocks.iter().zip(&z.coefficient_slices) {
                if block.is_penalized() {
                    penalty_blocks.push(PenaltyBlock {
                        label: format!("{eq}:{}", block.term),
                        range: range.start + offset..range.end + offset,
                        matrix: block.penalty.clone(),
                    });
                }
            }
        }
        Ok(SelectionProblem {
            spec: spec.clone(),
            counts: data.rows().iter().map(|r| r.n as f64).collect(),
            n_total: data.total() as f64,
            z1,
            z2,
            cells,
            outcome_row,
            penalty_blocks,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn selection_design(&self) -> &Predictor {
        &self.z1
    }

    pub fn outcome_design(&self) -> &Predictor {
        &self.z2
    }

    pub fn p1(&self) -> usize {
        self.z1.ncols()
    }

    pub fn p2(&self) -> usize {
        self.z2.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.p1() + self.p2() + 1
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    pub fn penalty_blocks(&self) -> &[PenaltyBlock] {
        &self.penalty_blocks
    }

    fn theta_index(&self) -> usize {
        self.p1() + self.p2()
    }

    /// S_λ over the full parameter vector.
    pub fn penalty_matrix(&self, lambdas: &[f64]) -> DMatrix<f64> {
        assert_eq!(
            lambdas.len(),
            self.penalty_blocks.len(),
            "one λ per penalized block"
        );
        let p = self.n_params();
        let mut s = DMatrix::zeros(p, p);
        for (b, &lam) in self.penalty_blocks.iter().zip(lambdas) {
            let mut view = s.view_mut(
                (b.range.start, b.range.start),
                (b.range.len(), b.range.len()),
            );
            view += &b.matrix * lam;
        }
        s
    }

    fn etas(&self, delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(delta.len(), self.n_params(), "parameter length mismatch");
        let eta1 = self.z1.eta(&delta[..self.p1()]);
        let eta2 = self.z2.eta(&delta[self.p1()..self.theta_index()]);
        (eta1, eta2)
    }

    fn row_eta2(&self, r: usize, eta2: &[f64]) -> f64 {
        self.outcome_row[r].map(|k| eta2[k]).unwrap_or(0.0)
    }

    /// ℓ(δ) = Σ_r n_r log p_cell(r).
    pub fn loglik(&self, delta: &[f64]) -> f64 {
        let (eta1, eta2) = self.etas(delta);
        let star = delta[self.theta_index()];
        let copula = CopulaSpec::from_unconstrained(self.spec.copula, UnconstrainedTheta(star));
        (0..self.cells.len())
            .map(|r| {
                self.counts[r]
                    * row_log_prob(
                        self.cells[r],
                        eta1[r],
                        self.row_eta2(r, &eta2),
                        &self.spec,
                        &copula,
                    )
            })
            .sum()
    }

    pub fn penalty(&self, delta: &[f64], lambdas: &[f64]) -> f64 {
        let mut total = 0.0;
        for (b, &lam) in self.penalty_blocks.iter().zip(lambdas) {
            let beta = DVector::from_column_slice(&delta[b.range.clone()]);
            total += 0.5 * lam * beta.dot(&(&b.matrix * &beta));
        }
        total
    }

    /// ℓ_p(δ) = ℓ(δ) − ½ Σ_k λ_k β_kᵀ S_k β_k.
    pub fn penalized_loglik(&self, delta: &[f64], lambdas: &[f64]) -> f64 {
        self.loglik(delta) - self.penalty(delta, lambdas)
    }

    /// ∇ℓ_p(δ).
    pub fn gradient(&self, delta: &[f64], lambdas: &[f64]) -> DVector<f64> {
        let (eta1, eta2) = self.etas(delta);
        let star = delta[self.theta_index()];
        let spec = &self.spec;
        let mut g = DVector::zeros(self.n_params());
        let ti = self.theta_index();
        let p1 = self.p1();
        for r in 0..self.cells.len() {
            let n = self.counts[r];
            if n == 0.0 {
                continue;
            }
            let rg = row_gradient(self.cells[r], eta1[r], self.row_eta2(r, &eta2), star, spec);
            let (c1, v1) = self.z1.design().row(r);
            for (&j, &x) in c1.iter().zip(v1) {
                g[j] += n * rg[0] * x;
            }
            if let Some(k) = self.outcome_row[r] {
                let (c2, v2) = self.z2.design().row(k);
                for (&j, &x) in c2.iter().zip(v2) {
                    g[p1 + j] += n * rg[1] * x;
                }
                g[ti] += n * rg[2];
            }
        }
        let d = DVector::from_column_slice(delta);
        g -= self.penalty_matrix(lambdas) * d;
        g
    }

    /// Hessian of the unpenalized ℓ. Per-row second derivatives in
    /// (η₁, η₂, θ*) come from central differences of the analytic per-row
    /// gradient and are then mapped through the sparse designs.
    pub fn hessian(&self, delta: &[f64]) -> DMatrix<f64> {
        let (eta1, eta2) = self.etas(delta);
        let star = delta[self.theta_index()];
        let spec = &self.spec;
        let p = self.n_params();
        let p1 = self.p1();
        let ti = self.theta_index();
        let mut h = DMatrix::zeros(p, p);
        let mut entries: Vec<(usize, f64, usize)> = Vec::new();
        for r in 0..self.cells.len() {
            let n = self.counts[r];
            if n == 0.0 {
                continue;
            }
            let e1 = eta1[r];
            let e2 = self.row_eta2(r, &eta2);
            let cell = self.cells[r];
            let rh = row_hessian(cell, e1, e2, star, spec);
            entries.clear();
            let (c1, v1) = self.z1.design().row(r);
            entries.extend(c1.iter().zip(v1).map(|(&j, &x)| (j, x, 0)));
            if let Some(k) = self.outcome_row[r] {
                let (c2, v2) = self.z2.design().row(k);
                entries.extend(c2.iter().zip(v2).map(|(&j, &x)| (p1 + j, x, 1)));
                entries.push((ti, 1.0, 2));
            }
            // Columns are increasing, so (a, b ≤ a) fills the lower triangle.
            for a in 0..entries.len() {
                let (ja, xa, ka) = entries[a];
                for &(jb, xb, kb) in &entries[..=a] {
                    h[(ja, jb)] += n * rh[ka][kb] * xa * xb;
                }
            }
        }
        h.fill_upper_triangle_with_lower_triangle();
        h
    }
}

fn row_log_prob(cell: Cell, e1: f64, e2: f64, spec: &ModelSpec, copula: &CopulaSpec) -> f64 {
    match cell {
        Cell::Unselected => clamp_prob(spec.selection_link.prob_zero(e1)).ln(),
        Cell::Selected { informal } => {
            let pi1 = spec.selection_link.prob_one(e1);
            let u = clamp_edge(pi1);
            let v = clamp_edge(spec.outcome_link.prob_one(e2));
            let c = copula.cdf_unchecked(u, v);
            if informal {
                clamp_prob(c).ln()
            } else {
                clamp_prob(pi1 - c).ln()
            }
        }
    }
}

/// ∂ log p / ∂(η₁, η₂, θ*) for one unit in `cell`.
fn row_gradient(cell: Cell, e1: f64, e2: f64, star: f64, spec: &ModelSpec) -> [f64; 3] {
    let l1 = spec.selection_link;
    let d1 = l1.prob_one_derivative(e1);
    match cell {
        Cell::Unselected => [-d1 / clamp_prob(l1.prob_zero(e1)), 0.0, 0.0],
        Cell::Selected { informal } => {
            let family = spec.copula;
            let s = UnconstrainedTheta(star);
            let copula = CopulaSpec::from_unconstrained(family, s);
            let dth = family.theta_derivative(s);
            let pi1 = l1.prob_one(e1);
            let u = clamp_edge(pi1);
            let v = clamp_edge(spec.outcome_link.prob_one(e2));
            let d2 = spec.outcome_link.prob_one_derivative(e2);
            let ev = copula.eval(u, v);
            let c = ev.c.clamp((u + v - 1.0).max(0.0), u.min(v));
            if informal {
                let p = clamp_prob(c);
                [ev.du * d1 / p, ev.dv * d2 / p, ev.dtheta * dth / p]
            } else {
                let p = clamp_prob(pi1 - c);
                [
                    d1 * (1.0 - ev.du) / p,
                    -ev.dv * d2 / p,
                    -ev.dtheta * dth / p,
                ]
            }
        }
    }
}

fn row_hessian(cell: Cell, e1: f64, e2: f64, star: f64, spec: &ModelSpec) -> [[f64; 3]; 3] {
    let mut h = [[0.0; 3]; 3];
    let x = [e1, e2, star];
    let dims = if cell == Cell::Unselected { 1 } else { 3 };
    for i in 0..dims {
        let step = 1e-5 * (1.0 + x[i].abs());
        let mut up = x;
        let mut dn = x;
        up[i] += step;
        dn[i] -= step;
        let gu = row_gradient(cell, up[0], up[1], up[2], spec);
        let gd = row_gradient(cell, dn[0], dn[1], dn[2], spec);
        for j in 0..dims {
            h[i][j] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    for i in 0..dims {
        for j in 0..i {
            let v = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// How smoothing parameters are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// Coordinate-wise golden-section search on ln λ minimizing AIC.
    Search {
        sweeps: usize,
        lower: f64,
        upper: f64,
        tol: f64,
    },
    /// One λ per penalized block, in block order.
    Fixed(Vec<f64>),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Search {
            sweeps: 2,
            lower: -8.0,
            upper: 8.0,
            tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub lambda: LambdaChoice,
    /// Starting θ per copula family (constrained scale). Defaults to θ* = 0.
    pub start_theta: BTreeMap<CopulaFamily, f64>,
    /// Full starting vector; replaces the two-GLM warm start when given.
    pub start: Option<Vec<f64>>,
    /// Population size used in BIC; defaults to the table's total count.
    pub bic_n: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            lambda: LambdaChoice::default(),
            start_theta: BTreeMap::new(),
            start: None,
            bic_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEdf {
    pub equation: String,
    pub term: String,
    pub edf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub selection_design: DesignRecipe,
    pub outcome_design: DesignRecipe,
    pub delta_hat: ParamVector,
    pub theta: f64,
    pub kendall_tau: f64,
    /// V = (H + S_λ)⁻¹.
    pub covariance: DMatrix<f64>,
    pub edf: f64,
    pub term_edf: Vec<TermEdf>,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_total: f64,
    pub lambdas: Vec<f64>,
    pub lambda_labels: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn copula(&self) -> CopulaSpec {
        CopulaSpec::from_unconstrained(self.spec.copula, self.delta_hat.theta_star)
    }

    pub fn n_params(&self) -> usize {
        self.delta_hat.len()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }

    /// Range of the outcome coefficients β₂ in the flat parameter vector.
    pub fn outcome_range(&self) -> Range<usize> {
        let p1 = self.delta_hat.beta1.len();
        p1..p1 + self.delta_hat.beta2.len()
    }

    /// Outcome design rebuilt on `population` with the fit-time encodings.
    pub fn outcome_predictor(&self, population: &CountTable) -> Result<Predictor> {
        self.outcome_design.build(population)
    }

    /// P̂(Y₂ = 1) for every row of `population`.
    pub fn outcome_probabilities(&self, population: &CountTable) -> Result<Vec<f64>> {
        let z = self.outcome_predictor(population)?;
        Ok(z.eta(&self.delta_hat.beta2)
            .into_iter()
            .map(|e| self.spec.outcome_link.prob_one(e))
            .collect())
    }
}

/// AIC = −2ℓ + 2·edf and BIC = −2ℓ + ln(N)·edf.
pub fn information_criteria(loglik: f64, edf: f64, n: f64) -> (f64, f64) {
    (-2.0 * loglik + 2.0 * edf, -2.0 * loglik + n.ln() * edf)
}

/// Log-likelihood of `params` on `data` (designs encoded from `data`).
pub fn loglik(params: &ParamVector, spec: &ModelSpec, data: &CountTable) -> Result<f64> {
    let problem = SelectionProblem::new(spec, data)?;
    check_len(&problem, params)?;
    Ok(problem.loglik(&params.to_vec()))
}

/// Gradient of the penalized log-likelihood of `params` on `data`.
pub fn loglik_gradient(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &CountTable,
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    let problem = SelectionProblem::new(spec, data)?;
    check_len(&problem, params)?;
    if lambdas.len() != problem.penalty_blocks.len() {
        return Err(Error::Config(format!(
            "{} smoothing parameters given for {} penalized blocks",
            lambdas.len(),
            problem.penalty_blocks.len()
        )));
    }
    Ok(problem
        .gradient(&params.to_vec(), lambdas)
        .as_slice()
        .to_vec())
}

fn check_len(problem: &SelectionProblem, params: &ParamVector) -> Result<()> {
    if params.beta1.len() != problem.p1() || params.beta2.len() != problem.p2() {
        return Err(Error::Config(format!(
            "parameter vector has ({}, {}) coefficients but the designs have ({}, {}) columns",
            params.beta1.len(),
            params.beta2.len(),
            problem.p1(),
            problem.p2()
        )));
    }
    Ok(())
}

struct Inner {
    delta: Vec<f64>,
    penalized: f64,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    ridge_used: bool,
}

/// Damped Newton ascent of ℓ_p at fixed λ.
fn newton(problem: &SelectionProblem, lambdas: &[f64], start: Vec<f64>, max_iter: usize) -> Inner {
    let ti = problem.theta_index();
    let (lo, hi) = problem.spec.copula.unconstrained_bounds();
    let s = problem.penalty_matrix(lambdas);
    let mut delta = start;
    delta[ti] = delta[ti].clamp(lo, hi);
    let mut current = problem.penalized_loglik(&delta, lambdas);
    let mut converged = false;
    let mut iterations = 0;
    let mut ridge_used = false;
    let mut gradient_norm = f64::INFINITY;
    while iterations < max_iter {
        let mut g = problem.gradient(&delta, lambdas);
        // θ* pinned at a bound with the gradient pushing outward is inactive.
        let pinned = (delta[ti] <= lo && g[ti] < 0.0) || (delta[ti] >= hi && g[ti] > 0.0);
        if pinned {
            g[ti] = 0.0;
        }
        gradient_norm = g.amax();
        if gradient_norm < 1e-6 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut a = -problem.hessian(&delta) + &s;
        if pinned {
            for j in 0..a.ncols() {
                a[(ti, j)] = 0.0;
                a[(j, ti)] = 0.0;
            }
            a[(ti, ti)] = 1.0;
        }
        let Some((step, ridge)) = solve_spd_with_ridge(&a, &g) else {
            break;
        };
        ridge_used = ridge > 0.0;
        // Newton decrement below rounding of the objective: nothing left to gain.
        if ridge == 0.0 && 0.5 * g.dot(&step) < 1e-11 * current.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let mut trial: Vec<f64> = delta
                .iter()
                .zip(step.iter())
                .map(|(d, s)| d + alpha * s)
                .collect();
            trial[ti] = trial[ti].clamp(lo, hi);
            let value = problem.penalized_loglik(&trial, lambdas);
            if value.is_finite() && value >= current {
                accepted = Some((trial, value));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            // No ascent direction left within rounding: accept as stationary
            // when the gradient is already small relative to the objective.
            converged = gradient_norm < 1e-6 * current.abs().max(1.0);
            break;
        };
        let rel = (value - current).abs() / current.abs().max(1.0);
        delta = trial;
        current = value;
        if rel < 1e-9 && alpha == 1.0 {
            gradient_norm = {
                let mut g = problem.gradient(&delta, lambdas);
                if (delta[ti] <= lo && g[ti] < 0.0) || (delta[ti] >= hi && g[ti] > 0.0) {
                    g[ti] = 0.0;
                }
                g.amax()
            };
            converged = true;
            break;
        }
    }
    Inner {
        delta,
        penalized: current,
        converged,
        iterations,
        gradient_norm,
        ridge_used,
    }
}

struct Assessed {
    inner: Inner,
    loglik: f64,
    h: DMatrix<f64>,
    edf: f64,
    aic: f64,
}

fn assess(problem: &SelectionProblem, lambdas: &[f64], inner: Inner) -> Assessed {
    let loglik = problem.loglik(&inner.delta);
    let h = -problem.hessian(&inner.delta);
    let a = &h + problem.penalty_matrix(lambdas);
    let (ainv, _) = spd_inverse(&a);
    let edf = (&ainv * &h).trace();
    let aic = -2.0 * loglik + 2.0 * edf;
    Assessed {
        inner,
        loglik,
        h,
        edf,
        aic,
    }
}

/// Starting values: two independent binary regressions and θ* from options.
fn starting_values(
    problem: &SelectionProblem,
    lambdas: &[f64],
    options: &FitOptions,
) -> Result<Vec<f64>> {
    let family = problem.spec.copula;
    let star = match options.start_theta.get(&family) {
        Some(&theta) => family.unconstrained(theta)?.0,
        None => 0.0,
    };
    if let Some(start) = &options.start {
        if start.len() != problem.n_params() {
            return Err(Error::Config(format!(
                "starting vector has {} entries, the model has {} parameters",
                start.len(),
                problem.n_params()
            )));
        }
        let mut s = start.clone();
        if options.start_theta.contains_key(&family) {
            s[problem.theta_index()] = star;
        }
        return Ok(s);
    }
    let n1 = problem
        .penalty_blocks
        .iter()
        .filter(|b| b.range.end <= problem.p1())
        .count();
    let y1: Vec<f64> = problem
        .cells
        .iter()
        .map(|c| if *c == Cell::Unselected { 0.0 } else { 1.0 })
        .collect();
    let g1 = fit_binary_glm(
        &problem.z1,
        &y1,
        &problem.counts,
        problem.spec.selection_link,
        &lambdas[..n1],
        50,
    )?;
    let (y2, w2): (Vec<f64>, Vec<f64>) = problem
        .cells
        .iter()
        .zip(&problem.counts)
        .filter_map(|(c, &n)| match c {
            Cell::Selected { informal } => Some((if *informal { 1.0 } else { 0.0 }, n)),
            Cell::Unselected => None,
        })
        .unzip();
    let g2 = fit_binary_glm(
        &problem.z2,
        &y2,
        &w2,
        problem.spec.outcome_link,
        &lambdas[n1..],
        50,
    )?;
    let mut start = g1.beta;
    start.extend(g2.beta);
    start.push(star);
    Ok(start)
}

fn golden_section(mut f: impl FnMut(f64) -> f64, lower: f64, upper: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lower, upper);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fits the model by penalized maximum likelihood.
pub fn fit(spec: &ModelSpec, data: &CountTable, options: &FitOptions) -> Result<FitResult> {
    let selected = data.selected_total();
    if selected == 0 || selected == data.total() {
        return Err(Error::Data(
            "the table needs both selected and non-selected units".into(),
        ));
    }
    let informal = data.selected_informal_total();
    if informal == 0 || informal == selected {
        return Err(Error::Data(
            "selected units must include both outcome values".into(),
        ));
    }
    let problem = SelectionProblem::new(spec, data)?;
    fit_problem(&problem, options)
}

/// Fits a model already bound to its data.
pub fn fit_problem(problem: &SelectionProblem, options: &FitOptions) -> Result<FitResult> {
    let n_pen = problem.penalty_blocks.len();
    let mut diagnostics = problem.spec.warnings();
    let mut lambdas = match &options.lambda {
        LambdaChoice::Fixed(l) => {
            if l.len() != n_pen {
                return Err(Error::Config(format!(
                    "{} fixed smoothing parameters given for {} penalized blocks",
                    l.len(),
                    n_pen
                )));
            }
            if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(
                    "smoothing parameters must be finite and ≥ 0".into(),
                ));
            }
            l.clone()
        }
        LambdaChoice::Search { .. } => vec![1.0; n_pen],
    };
    let start = starting_values(problem, &lambdas, options)?;
    let mut best = assess(
        problem,
        &lambdas,
        newton(problem, &lambdas, start, options.max_iter),
    );

    if let LambdaChoice::Search {
        sweeps,
        lower,
        upper,
        tol,
    } = options.lambda
    {
        if n_pen > 0 {
            // With one block a sweep is already the full search; further
            // sweeps stop as soon as one leaves every λ unchanged.
            let sweeps = if n_pen == 1 { sweeps.min(1) } else { sweeps };
            for _ in 0..sweeps {
                let before = lambdas.clone();
                for k in 0..n_pen {
                    let mut trial_lambdas = lambdas.clone();
                    let warm = best.inner.delta.clone();
                    let mut cache: Vec<(f64, Assessed)> = Vec::new();
                    let (log_best, _) = golden_section(
                        |log_l| {
                            trial_lambdas[k] = log_l.exp();
                            let a = assess(
                                problem,
                                &trial_lambdas,
                                newton(problem, &trial_lambdas, warm.clone(), options.max_iter),
                            );
                            let aic = if a.aic.is_finite() {
                                a.aic
                            } else {
                                f64::INFINITY
                            };
                            cache.push((log_l, a));
                            aic
                        },
                        lower,
                        upper,
                        tol,
                    );
                    let (_, candidate) = cache
                        .into_iter()
                        .find(|(l, _)| *l == log_best)
                        .expect("evaluated point");
                    if candidate.aic < best.aic {
                        lambdas[k] = log_best.exp();
                        best = candidate;
                    }
                }
                if lambdas == before {
                    break;
                }
            }
        }
    }

    finish(problem, lambdas, best, options, &mut diagnostics)
}

fn finish(
    problem: &SelectionProblem,
    lambdas: Vec<f64>,
    best: Assessed,
    options: &FitOptions,
    diagnostics: &mut Vec<String>,
) -> Result<FitResult> {
    let Assessed {
        inner,
        loglik,
        h,
        edf,
        ..
    } = best;
    if !loglik.is_finite() {
        return Err(Error::Numerical(
            "log-likelihood is not finite at the optimum".into(),
        ));
    }
    let a = &h + problem.penalty_matrix(&lambdas);
    let (mut v, fallback) = spd_inverse(&a);
    if fallback {
        diagnostics.push("penalized Hessian is singular; covariance uses a pseudo-inverse".into());
    }
    symmetrize(&mut v);
    let (v, clipped) = nearest_psd(&v);
    if clipped {
        diagnostics.push("covariance projected to the nearest positive semidefinite matrix".into());
    }
    if inner.ridge_used {
        diagnostics.push("the final Newton step needed a ridge on an indefinite Hessian".into());
    }
    if !inner.converged {
        diagnostics.push(format!(
            "no convergence after {} iterations (max |gradient| = {:.3e})",
            inner.iterations, inner.gradient_norm
        ));
    }
    // Unpenalized coefficients drifting this far on the link scale signal
    // complete or quasi-complete separation.
    let mut penalized_cols = vec![false; problem.n_params()];
    for b in &problem.penalty_blocks {
        for j in b.range.clone() {
            penalized_cols[j] = true;
        }
    }
    let ti = problem.theta_index();
    if inner.delta[..ti]
        .iter()
        .zip(&penalized_cols)
        .any(|(b, pen)| !pen && b.abs() > 25.0)
    {
        diagnostics.push("coefficients diverging: possible separation".into());
    }

    let f = spd_inverse(&a).0 * &h;
    let mut term_edf = Vec::new();
    for (eq, z, offset) in [
        ("selection", &problem.z1, 0),
        ("outcome", &problem.z2, problem.p1()),
    ] {
        for (block, range) in z.blocks.iter().zip(&z.coefficient_slices) {
            let e: f64 = range.clone().map(|j| f[(j + offset, j + offset)]).sum();
            term_edf.push(TermEdf {
                equation: eq.to_string(),
                term: block.term.to_string(),
                edf: e,
            });
        }
    }
    term_edf.push(TermEdf {
        equation: "copula".into(),
        term: "theta".into(),
        edf: f[(ti, ti)],
    });

    let n_total = options.bic_n.unwrap_or(problem.n_total);
    let (aic, bic) = information_criteria(loglik, edf, n_total);
    let delta_hat = ParamVector::from_slice(&inner.delta, problem.p1(), problem.p2());
    let copula = CopulaSpec::from_unconstrained(problem.spec.copula, delta_hat.theta_star);
    Ok(FitResult {
        spec: problem.spec.clone(),
        selection_design: problem.z1.recipe.clone(),
        outcome_design: problem.z2.recipe.clone(),
        theta: copula.theta(),
        kendall_tau: copula.kendall_tau(),
        delta_hat,
        covariance: v,
        edf,
        term_edf,
        loglik,
        penalized_loglik: inner.penalized,
        aic,
        bic,
        n_total,
        lambda_labels: problem
            .penalty_blocks
            .iter()
            .map(|b| b.label.clone())
            .collect(),
        lambdas,
        converged: inner.converged,
        iterations: inner.iterations,
        gradient_norm: inner.gradient_norm,
        diagnostics: std::mem::take(diagnostics),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFit {
    pub aic: f64,
    pub bic: f64,
    pub loglik: f64,
    pub edf: f64,
    pub theta: f64,
    pub prevalence: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub copula: CopulaFamily,
    pub selection_link: LinkFunction,
    pub outcome_link: LinkFunction,
    pub result: std::result::Result<GridFit, String>,
}

/// Fits every (copula, link pair) combination. Rows come back sorted by AIC,
/// failed cells last; the order does not depend on thread scheduling.
pub fn model_grid(
    data: &CountTable,
    copulas: &[CopulaFamily],
    link_pairs: &[(LinkFunction, LinkFunction)],
    base: &ModelSpec,
    options: &FitOptions,
) -> Vec<GridRow> {
    let cells: Vec<(CopulaFamily, LinkFunction, LinkFunction)> = link_pairs
        .iter()
        .flat_map(|&(l1, l2)| copulas.iter().map(move |&c| (c, l1, l2)))
        .collect();
    let mut rows: Vec<GridRow> = cells
        .par_iter()
        .map(|&(copula, l1, l2)| {
            let spec = base.with(copula, l1, l2);
            let result = fit(&spec, data, options)
                .and_then(|f| {
                    let prevalence = gh_prevalence(&f, data)?.value;
                    Ok(GridFit {
                        aic: f.aic,
                        bic: f.bic,
                        loglik: f.loglik,
                        edf: f.edf,
                        theta: f.theta,
                        prevalence,
                        converged: f.converged,
                    })
                })
                .map_err(|e| e.to_string());
            GridRow {
                copula,
                selection_link: l1,
                outcome_link: l2,
                result,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &GridRow| match &r.result {
            Ok(f) => (0u8, f.aic),
            Err(_) => (1u8, 0.0),
        };
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(
            (a.selection_link, a.outcome_link, a.copula).cmp(&(
                b.selection_link,
                b.outcome_link,
                b.copula,
            )),
        )
    });
    rows
}
