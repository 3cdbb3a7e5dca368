//! Prevalence estimators: the model-based (GH) estimator, the naive share of
//! detected cases, and the propensity-score weighted estimator.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Column, CountTable};
use crate::design::{design_recipe, DesignRecipe, TermSpec};
use crate::error::{Error, Result};
use crate::glm::fit_binary_glm;
use crate::linalg::{nearest_psd, psd_factor};
use crate::links::LinkFunction;
use crate::model::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Gh,
    Naive,
    NaiveAmongSelected,
    PsWeighted,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Gh => "gh",
            Estimator::Naive => "naive",
            Estimator::NaiveAmongSelected => "naive_among_selected",
            Estimator::PsWeighted => "ps_weighted",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub estimator: Estimator,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub domain: Option<String>,
    /// Population count behind the estimate.
    pub n: u64,
    /// Set when the raw value left [0, 1] and was clamped.
    pub clamped: bool,
}

impl PrevalenceEstimate {
    fn point(estimator: Estimator, value: f64, n: u64) -> PrevalenceEstimate {
        let clamped = !(0.0..=1.0).contains(&value);
        PrevalenceEstimate {
            estimator,
            value: value.clamp(0.0, 1.0),
            lower: None,
            upper: None,
            domain: None,
            n,
            clamped,
        }
    }
}

/// (1/N) Σ_r n_r P̂(Y₂ = 1 | row r) over every population row.
pub fn gh_prevalence(fit: &FitResult, population: &CountTable) -> Result<PrevalenceEstimate> {
    let n = population.total();
    if n == 0 {
        return Err(Error::Data("population has no units".into()));
    }
    let probs = fit.outcome_probabilities(population)?;
    Ok(PrevalenceEstimate::point(
        Estimator::Gh,
        weighted_mean(population, &probs),
        n,
    ))
}

fn weighted_mean(population: &CountTable, probs: &[f64]) -> f64 {
    let total = population.total() as f64;
    population
        .rows()
        .iter()
        .zip(probs)
        .map(|(r, p)| r.n as f64 * p)
        .sum::<f64>()
        / total
}

/// The GH estimator within each level of a categorical column.
pub fn gh_prevalence_by_domain(
    fit: &FitResult,
    population: &CountTable,
    domain_column: &str,
) -> Result<Vec<PrevalenceEstimate>> {
    if !population.has_column(domain_column) {
        return Err(Error::UnknownCovariate(domain_column.to_string()));
    }
    let (values, levels) = match population.column(domain_column)? {
        Column::Categorical { values, levels } => {
            (values, CountTable::level_order(domain_column, levels))
        }
        Column::Numeric(_) => {
            return Err(Error::Config(format!(
                "domain column `{domain_column}` must be categorical"
            )))
        }
    };
    if levels.is_empty() {
        return Err(Error::Data("population has no units".into()));
    }
    let probs = fit.outcome_probabilities(population)?;
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let mut sum = 0.0;
        let mut n = 0u64;
        for ((row, p), v) in population.rows().iter().zip(&probs).zip(&values) {
            if *v == level {
                sum += row.n as f64 * p;
                n += row.n;
            }
        }
        if n == 0 {
            return Err(Error::Data(format!("domain `{level}` is empty")));
        }
        let mut est = PrevalenceEstimate::point(Estimator::Gh, sum / n as f64, n);
        est.domain = Some(level);
        out.push(est);
    }
    Ok(out)
}

/// (1/N) Σ n_r over selected rows with the outcome observed as 1.
pub fn naive_prevalence(data: &CountTable, n: u64) -> Result<PrevalenceEstimate> {
    if n == 0 {
        return Err(Error::Data("naive estimator needs N > 0".into()));
    }
    let detected = data.selected_informal_total();
    Ok(PrevalenceEstimate::point(
        Estimator::Naive,
        detected as f64 / n as f64,
        n,
    ))
}

/// Share of detected cases among selected units.
pub fn naive_among_selected(data: &CountTable) -> Result<PrevalenceEstimate> {
    let selected = data.selected_total();
    if selected == 0 {
        return Err(Error::Data("no selected units".into()));
    }
    let detected = data.selected_informal_total();
    Ok(PrevalenceEstimate::point(
        Estimator::NaiveAmongSelected,
        detected as f64 / selected as f64,
        selected,
    ))
}

/// Penalized binary regression of the selection indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub terms: Vec<TermSpec>,
    pub design: DesignRecipe,
    pub coefficients: Vec<f64>,
    pub link: LinkFunction,
    pub lambdas: Vec<f64>,
    pub converged: bool,
}

pub const PROPENSITY_FLOOR: f64 = 1e-6;

impl PropensityModel {
    /// Fits P(selected) on all rows with a logit link; every penalized
    /// block gets the ridge weight `lambda`.
    pub fn fit(data: &CountTable, terms: &[TermSpec], lambda: f64) -> Result<PropensityModel> {
        let design = design_recipe(terms, data)?;
        let z = design.build(data)?;
        let lambdas = vec![lambda; z.penalties().len()];
        let y: Vec<f64> = data
            .rows()
            .iter()
            .map(|r| if r.selected { 1.0 } else { 0.0 })
            .collect();
        let w: Vec<f64> = data.rows().iter().map(|r| r.n as f64).collect();
        let g = fit_binary_glm(&z, &y, &w, LinkFunction::Logit, &lambdas, 100)?;
        Ok(PropensityModel {
            terms: terms.to_vec(),
            design,
            coefficients: g.beta,
            link: LinkFunction::Logit,
            lambdas,
            converged: g.converged,
        })
    }

    /// π̂ per row of `data`, clamped to [PROPENSITY_FLOOR, 1].
    pub fn propensities(&self, data: &CountTable) -> Result<Vec<f64>> {
        let z = self.design.build(data)?;
        Ok(z.eta(&self.coefficients)
            .into_iter()
            .map(|e| self.link.prob_one(e).clamp(PROPENSITY_FLOOR, 1.0))
            .collect())
    }
}

/// (1/N) Σ_{selected, outcome 1} n_r / π̂_r.
pub fn ps_weighted_prevalence(
    data: &CountTable,
    propensity: &PropensityModel,
    n: u64,
) -> Result<PrevalenceEstimate> {
    if !propensity.converged {
        return Err(Error::Numerical("propensity model did not converge".into()));
    }
    let pi = propensity.propensities(data)?;
    ps_weighted_with(data, &pi, n)
}

/// The weighted estimator for given per-row propensities.
pub fn ps_weighted_with(
    data: &CountTable,
    propensities: &[f64],
    n: u64,
) -> Result<PrevalenceEstimate> {
    if n == 0 {
        return Err(Error::Data("weighted estimator needs N > 0".into()));
    }
    let total: f64 = data
        .rows()
        .iter()
        .zip(propensities)
        .filter(|(r, _)| r.selected && r.informal == Some(true))
        .map(|(r, p)| r.n as f64 / p.clamp(PROPENSITY_FLOOR, 1.0))
        .sum();
    let est = PrevalenceEstimate::point(Estimator::PsWeighted, total / n as f64, n);
    if est.clamped {
        log::warn!("propensity-weighted prevalence exceeded 1 and was clamped");
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorOptions {
    pub n_draws: usize,
    pub quantiles: (f64, f64),
    pub seed: u64,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        PosteriorOptions {
            n_draws: 1000,
            quantiles: (0.025, 0.975),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorInterval {
    pub lower: f64,
    pub upper: f64,
    pub n_draws: usize,
    /// Set when the covariance had to be projected onto the PSD cone.
    pub psd_projected: bool,
}

/// Quantiles of the GH estimate under δ ~ N(δ̂, V). Only β₂ enters the
/// estimate, so draws are taken from its marginal N(β̂₂, V₂₂).
pub fn posterior_interval(
    fit: &FitResult,
    population: &CountTable,
    options: &PosteriorOptions,
) -> Result<PosteriorInterval> {
    let (qlo, qhi) = options.quantiles;
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo > qhi {
        return Err(Error::Config(format!(
            "quantiles must satisfy 0 ≤ lower ≤ upper ≤ 1, got ({qlo}, {qhi})"
        )));
    }
    if options.n_draws == 0 {
        return Err(Error::Config(
            "posterior simulation needs at least one draw".into(),
        ));
    }
    if population.total() == 0 {
        return Err(Error::Data("population has no units".into()));
    }
    let range = fit.outcome_range();
    let v22: DMatrix<f64> = fit
        .covariance
        .view((range.start, range.start), (range.len(), range.len()))
        .into_owned();
    let (v22, psd_projected) = nearest_psd(&v22);
    if psd_projected {
        log::warn!("outcome covariance block was not PSD; projected before simulation");
    }
    let l = psd_factor(&v22);
    let z = fit.outcome_predictor(population)?;
    let mean = DVector::from_column_slice(&fit.delta_hat.beta2);
    let link = fit.spec.outcome_link;
    let p = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut draws = Vec::with_capacity(options.n_draws);
    for _ in 0..options.n_draws {
        let e = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
        let beta = &mean + &l * e;
        let probs: Vec<f64> = z
            .eta(beta.as_slice())
            .into_iter()
            .map(|x| link.prob_one(x))
            .collect();
        draws.push(weighted_mean(population, &probs));
    }
    draws.sort_by(f64::total_cmp);
    Ok(PosteriorInterval {
        lower: quantile_sorted(&draws, qlo),
        upper: quantile_sorted(&draws, qhi),
        n_draws: options.n_draws,
        psd_projected,
    })
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// GH estimate with its posterior interval attached.
pub fn gh_with_interval(
    fit: &FitResult,
    population: &CountTable,
    options: &PosteriorOptions,
) -> Result<(PrevalenceEstimate, PosteriorInterval)> {
    let mut est = gh_prevalence(fit, population)?;
    let ci = posterior_interval(fit, population, options)?;
    est.lower = Some(ci.lower.min(est.value));
    est.upper = Some(ci.upper.max(est.value));
    Ok((est, ci))
}
