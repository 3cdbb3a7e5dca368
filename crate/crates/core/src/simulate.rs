//! Synthetic populations with copula-dependent selection, and Monte Carlo
//! evaluation of the prevalence estimators against known truth.

use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{clamp_edge, CopulaFamily, CopulaSpec};
use crate::data::{CountRow, CountTable, SizeClass};
use crate::design::{design_recipe, TermSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    gh_prevalence, naive_among_selected, naive_prevalence, posterior_interval,
    ps_weighted_prevalence, PosteriorOptions, PropensityModel,
};
use crate::links::LinkFunction;
use crate::model::{fit, FitOptions, ModelSpec};

/// Draws (U, V) from the copula by conditional inversion: U and W uniform,
/// then V solves ∂C/∂u(U, V) = W by bisection.
pub fn sample_copula_pair<R: Rng + ?Sized>(spec: &CopulaSpec, rng: &mut R) -> Result<(f64, f64)> {
    let u: f64 = rng.sample(Open01);
    let w: f64 = rng.sample(Open01);
    Ok((u, conditional_inverse(spec, u, w)?))
}

/// v with ∂C/∂u(u, v) = w, to 1e-10 in v.
pub fn conditional_inverse(spec: &CopulaSpec, u: f64, w: f64) -> Result<f64> {
    let u = clamp_edge(u);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut iter = 0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let value = spec.partial_u_unchecked(u, clamp_edge(mid));
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "conditional distribution not finite at ({u}, {mid})"
            )));
        }
        if value < w {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
        if iter > 200 {
            return Err(Error::Numerical(
                "conditional inversion did not converge".into(),
            ));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Normal-copula pair from correlated normals; a cross-check for the
/// conditional-inversion sampler.
pub fn sample_normal_direct<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(rand_distr::StandardNormal);
    let e: f64 = rng.sample(rand_distr::StandardNormal);
    let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * e;
    (crate::special::norm_cdf(z1), crate::special::norm_cdf(z2))
}

/// Kendall's τ-a of paired samples in O(n log n) (Knight's algorithm).
/// Ties contribute neither concordance nor discordance.
pub fn empirical_kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let total = (n as f64) * (n as f64 - 1.0) / 2.0;
    let count_ties = |keys: &mut dyn Iterator<Item = f64>| -> f64 {
        let mut ties = 0.0;
        let mut run = 1.0;
        let mut prev: Option<f64> = None;
        for k in keys {
            if prev == Some(k) {
                run += 1.0;
            } else {
                ties += run * (run - 1.0) / 2.0;
                run = 1.0;
            }
            prev = Some(k);
        }
        ties + run * (run - 1.0) / 2.0
    };
    let tx = count_ties(&mut pairs.iter().map(|p| p.0));
    let mut txy = 0.0;
    {
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && pairs[j] == pairs[i] {
                j += 1;
            }
            let run = (j - i) as f64;
            txy += run * (run - 1.0) / 2.0;
            i = j;
        }
    }
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as f64;
    let ty = count_ties(&mut ys.iter().copied());
    // Pairs tied in x were sorted by y, so they add no swaps.
    let discordant = swaps;
    let concordant = total - tx - ty + txy - discordant;
    (concordant - discordant) / total
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Beta(α, β) scaled by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGenerator {
    pub n_districts: usize,
    /// Industry codes with relative population weights.
    pub industries: Vec<(String, f64)>,
    /// Size classes with relative population weights.
    pub sizes: Vec<(SizeClass, f64)>,
    /// District-level covariates by name.
    pub district_covariates: BTreeMap<String, BetaSpec>,
    /// Shape of the Gamma-distributed district size weights; `None` gives
    /// equal weights.
    pub district_weight_shape: Option<f64>,
}

impl CovariateGenerator {
    fn district_label(&self, d: usize) -> String {
        let width = self.n_districts.to_string().len().max(3);
        format!("D{:0width$}", d + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub copula: CopulaSpec,
    pub selection_link: LinkFunction,
    pub outcome_link: LinkFunction,
    pub selection_terms: Vec<TermSpec>,
    pub outcome_terms: Vec<TermSpec>,
    /// Coefficients for the selection design encoded on the full stratum grid.
    pub true_beta1: Vec<f64>,
    pub true_beta2: Vec<f64>,
    pub covariates: CovariateGenerator,
    pub population_size: u64,
    pub seed: u64,
}

/// One stratum of the finite population with its true linear predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStratum {
    pub district: String,
    pub industry: String,
    pub size: SizeClass,
    pub n: u64,
    pub eta1: f64,
    pub eta2: f64,
}

/// The finite population: strata counts, covariates and true predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFrame {
    pub strata: Vec<FrameStratum>,
    pub district_covariates: BTreeMap<String, BTreeMap<String, f64>>,
    pub selection_link: LinkFunction,
    pub outcome_link: LinkFunction,
    pub copula: CopulaSpec,
}

impl PopulationFrame {
    pub fn total(&self) -> u64 {
        self.strata.iter().map(|s| s.n).sum()
    }

    /// Σ n π₂ / N: the prevalence the estimators target.
    pub fn expected_prevalence(&self) -> f64 {
        let total = self.total() as f64;
        self.strata
            .iter()
            .map(|s| s.n as f64 * self.outcome_link.prob_one(s.eta2))
            .sum::<f64>()
            / total
    }

    pub fn expected_selection_rate(&self) -> f64 {
        let total = self.total() as f64;
        self.strata
            .iter()
            .map(|s| s.n as f64 * self.selection_link.prob_one(s.eta1))
            .sum::<f64>()
            / total
    }

    /// The population as a count table with every unit unselected; used as
    /// the population for the GH estimator.
    pub fn population_table(&self) -> Result<CountTable> {
        let rows = self
            .strata
            .iter()
            .filter(|s| s.n > 0)
            .map(|s| CountRow {
                district: s.district.clone(),
                industry: s.industry.clone(),
                size: s.size,
                selected: false,
                informal: None,
                n: s.n,
            })
            .collect();
        CountTable::from_rows(rows, self.district_covariates.clone(), &mut Vec::new())
    }
}

/// Every (district, industry, size) combination once, with covariates.
fn stratum_grid(
    gen: &CovariateGenerator,
    covs: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<CountTable> {
    let mut rows = Vec::new();
    for d in 0..gen.n_districts {
        for (ind, _) in &gen.industries {
            for (size, _) in &gen.sizes {
                rows.push(CountRow {
                    district: gen.district_label(d),
                    industry: ind.clone(),
                    size: *size,
                    selected: false,
                    informal: None,
                    n: 1,
                });
            }
        }
    }
    CountTable::from_rows(rows, covs.clone(), &mut Vec::new())
}

/// Mixes a master seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn validate_config(config: &DgpConfig) -> Result<()> {
    let gen = &config.covariates;
    if config.population_size == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    if gen.n_districts == 0 || gen.industries.is_empty() || gen.sizes.is_empty() {
        return Err(Error::Config(
            "stratum definition needs districts, industries and sizes".into(),
        ));
    }
    let weights = gen
        .industries
        .iter()
        .map(|w| w.1)
        .chain(gen.sizes.iter().map(|w| w.1));
    for w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Config(format!(
                "stratum weight {w} must be finite and ≥ 0"
            )));
        }
    }
    Ok(())
}

/// District covariates and true predictors on the stratum grid; the part of
/// the frame that does not depend on the population counts.
fn grid_predictors(
    config: &DgpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(CountTable, Vec<f64>, Vec<f64>)> {
    let gen = &config.covariates;
    let mut covs: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for d in 0..gen.n_districts {
        let mut m = BTreeMap::new();
        for (name, spec) in &gen.district_covariates {
            let beta = Beta::new(spec.alpha, spec.beta)
                .map_err(|e| Error::Config(format!("covariate `{name}`: {e}")))?;
            m.insert(name.clone(), beta.sample(rng) * spec.scale);
        }
        covs.insert(gen.district_label(d), m);
    }
    let grid = stratum_grid(gen, &covs)?;
    let eta = |terms: &[TermSpec], beta: &[f64], what: &str| -> Result<Vec<f64>> {
        let z = design_recipe(terms, &grid)?.build(&grid)?;
        if z.ncols() != beta.len() {
            return Err(Error::Config(format!(
                "{what} coefficients have length {} but the design has {} columns",
                beta.len(),
                z.ncols()
            )));
        }
        Ok(z.eta(beta))
    };
    let eta1 = eta(&config.selection_terms, &config.true_beta1, "selection")?;
    let eta2 = eta(&config.outcome_terms, &config.true_beta2, "outcome")?;
    Ok((grid, eta1, eta2))
}

/// Builds the finite population of `config` (deterministic in its seed).
pub fn build_frame(config: &DgpConfig) -> Result<PopulationFrame> {
    validate_config(config)?;
    let gen = &config.covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
    let (grid, eta1, eta2) = grid_predictors(config, &mut rng)?;

    let district_w: Vec<f64> = match gen.district_weight_shape {
        Some(shape) => {
            let g = Gamma::new(shape, 1.0)
                .map_err(|e| Error::Config(format!("district weights: {e}")))?;
            (0..gen.n_districts).map(|_| g.sample(&mut rng)).collect()
        }
        None => vec![1.0; gen.n_districts],
    };
    let ind_w: BTreeMap<&str, f64> = gen
        .industries
        .iter()
        .map(|(k, w)| (k.as_str(), *w))
        .collect();
    let size_w: BTreeMap<SizeClass, f64> = gen.sizes.iter().copied().collect();
    let district_index: BTreeMap<String, usize> = (0..gen.n_districts)
        .map(|d| (gen.district_label(d), d))
        .collect();
    let weights: Vec<f64> = grid
        .rows()
        .iter()
        .map(|r| {
            district_w[district_index[&r.district]] * ind_w[r.industry.as_str()] * size_w[&r.size]
        })
        .collect();
    let counts = multinomial(config.population_size, &weights, &mut rng)?;

    let strata = grid
        .rows()
        .iter()
        .zip(counts)
        .zip(eta1.into_iter().zip(eta2))
        .map(|((r, n), (e1, e2))| FrameStratum {
            district: r.district.clone(),
            industry: r.industry.clone(),
            size: r.size,
            n,
            eta1: e1,
            eta2: e2,
        })
        .collect();
    Ok(PopulationFrame {
        strata,
        district_covariates: grid.district_covariate_map(),
        selection_link: config.selection_link,
        outcome_link: config.outcome_link,
        copula: config.copula,
    })
}

fn multinomial(n: u64, weights: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let mut remaining_w: f64 = weights.iter().sum();
    if !(remaining_w > 0.0) {
        return Err(Error::Config("all stratum weights are zero".into()));
    }
    let mut remaining = n;
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        if remaining == 0 || w <= 0.0 {
            out.push(0);
            remaining_w -= w.max(0.0);
            continue;
        }
        let p = (w / remaining_w).clamp(0.0, 1.0);
        let k = binomial(remaining, p, rng)?;
        out.push(k);
        remaining -= k;
        remaining_w -= w;
    }
    if remaining > 0 {
        // Rounding left the last positive-weight stratum short.
        if let Some(i) = weights.iter().rposition(|&w| w > 0.0) {
            out[i] += remaining;
        }
    }
    Ok(out)
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    if p >= 1.0 {
        return Ok(n);
    }
    Ok(Binomial::new(n, p)
        .map_err(|e| Error::Numerical(format!("binomial({n}, {p}): {e}")))?
        .sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPopulation {
    pub table: CountTable,
    /// Share of all units (selected or not) whose outcome is 1.
    pub realized_prevalence: f64,
    pub expected_prevalence: f64,
}

/// Draws selection and outcomes for every unit of `frame`.
///
/// Per unit the latent pair (U, V) follows the copula; the unit is selected
/// iff U ≤ π₁ and has outcome 1 iff V ≤ π₂, so that
/// P(selected, outcome 1) = C(π₁, π₂) as in the likelihood. Selection counts
/// are drawn as Binomial(n, π₁), which is the same law. For a selected unit,
/// U is uniform on (0, π₁) and V ≤ π₂ exactly when the conditional uniform
/// W = ∂C/∂u(U, V) is at most ∂C/∂u(U, π₂), so no root finding is needed.
/// Outcomes of unselected units are only counted.
pub fn simulate_from_frame(frame: &PopulationFrame, seed: u64) -> Result<SimulatedPopulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let copula = &frame.copula;
    let mut rows = Vec::new();
    let mut outcome_ones = 0u64;
    for s in frame.strata.iter().filter(|s| s.n > 0) {
        let pi1 = frame.selection_link.prob_one(s.eta1);
        let pi2 = frame.outcome_link.prob_one(s.eta2);
        let q1 = frame.selection_link.prob_zero(s.eta1);
        let selected = binomial(s.n, pi1, &mut rng)?;
        let mut informal = 0u64;
        for _ in 0..selected {
            let t: f64 = rng.sample(Open01);
            let u = pi1 * t;
            let w: f64 = rng.sample(Open01);
            let threshold = if pi2 <= 0.0 {
                0.0
            } else if pi2 >= 1.0 {
                1.0
            } else {
                copula.partial_u_unchecked(clamp_edge(u), clamp_edge(pi2))
            };
            if w <= threshold {
                informal += 1;
            }
        }
        // Outcomes among unselected units: P(Y₂ = 1 | U > π₁).
        let unselected = s.n - selected;
        if unselected > 0 {
            let p11 = copula.cdf_unchecked(pi1, pi2);
            let p = if q1 > 0.0 {
                ((pi2 - p11) / q1).clamp(0.0, 1.0)
            } else {
                0.0
            };
            outcome_ones += binomial(unselected, p, &mut rng)?;
        }
        outcome_ones += informal;
        let mut push = |sel: bool, inf: Option<bool>, n: u64| {
            if n > 0 {
                rows.push(CountRow {
                    district: s.district.clone(),
                    industry: s.industry.clone(),
                    size: s.size,
                    selected: sel,
                    informal: inf,
                    n,
                });
            }
        };
        push(false, None, unselected);
        push(true, Some(true), informal);
        push(true, Some(false), selected - informal);
    }
    let table = CountTable::from_rows(rows, frame.district_covariates.clone(), &mut Vec::new())?;
    let total = frame.total() as f64;
    Ok(SimulatedPopulation {
        table,
        realized_prevalence: outcome_ones as f64 / total,
        expected_prevalence: frame.expected_prevalence(),
    })
}

/// One simulated count table for `config`.
pub fn simulate_population(config: &DgpConfig) -> Result<CountTable> {
    let frame = build_frame(config)?;
    Ok(simulate_from_frame(&frame, derive_seed(config.seed, 0))?.table)
}

pub const PAPER_INDUSTRIES: [(&str, f64); 16] = [
    ("A", 1.31),
    ("C", 11.76),
    ("E", 0.63),
    ("F", 11.74),
    ("G", 27.88),
    ("H", 6.78),
    ("I", 3.72),
    ("J", 2.24),
    ("K", 1.98),
    ("L", 3.33),
    ("M", 8.88),
    ("N", 3.00),
    ("P", 4.53),
    ("Q", 4.62),
    ("R", 1.72),
    ("S", 5.88),
];

pub const PAPER_SIZES: [(SizeClass, f64); 4] = [
    (SizeClass::UpTo9, 80.45),
    (SizeClass::From10To49, 15.56),
    (SizeClass::From50To249, 3.40),
    (SizeClass::From250, 0.59),
];

/// Industry effects C..S relative to A, selection then outcome.
const PAPER_INDUSTRY_EFFECTS: [(f64, f64); 15] = [
    (0.11, 0.06),
    (0.00, 0.01),
    (0.07, 0.14),
    (0.07, 0.15),
    (-0.22, 0.33),
    (0.29, 0.44),
    (-0.23, 0.28),
    (-0.43, 0.26),
    (-0.41, 0.21),
    (-0.36, 0.15),
    (0.06, 0.53),
    (-0.55, 0.02),
    (-0.44, 0.39),
    (-0.33, 0.00),
    (-0.15, 0.07),
];

const PAPER_SIZE_EFFECTS: [(f64, f64); 3] = [(0.30, 0.33), (0.16, -0.04), (0.39, 0.26)];

pub const PAPER_POPULATION: u64 = 871_327;
pub const PAPER_DISTRICTS: usize = 380;

impl DgpConfig {
    /// A population shaped like the inspection data: 16 industries and 4 size
    /// classes with the published population shares, probit selection with
    /// the published selection effects plus a district random effect and
    /// complaints ratio, logit outcome with the published outcome effects plus
    /// a linear unemployment effect, Gumbel θ = 1.93. Intercepts are tuned on
    /// the frame to an expected selection rate of ≈ 3% and an expected
    /// prevalence of 5.7%.
    pub fn paper_like(n_districts: usize, population_size: u64, seed: u64) -> Result<DgpConfig> {
        let mut covs = BTreeMap::new();
        covs.insert(
            "complaints".to_string(),
            BetaSpec {
                alpha: 2.0,
                beta: 60.0,
                scale: 1.0,
            },
        );
        covs.insert(
            "unemployment".to_string(),
            BetaSpec {
                alpha: 4.0,
                beta: 40.0,
                scale: 1.0,
            },
        );
        let covariates = CovariateGenerator {
            n_districts,
            industries: PAPER_INDUSTRIES
                .iter()
                .map(|(k, w)| (k.to_string(), *w))
                .collect(),
            sizes: PAPER_SIZES.to_vec(),
            district_covariates: covs,
            district_weight_shape: Some(4.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX - 1));
        let re = Normal::new(0.0, 0.2).expect("valid normal");
        let mut beta1 = vec![-2.08];
        beta1.extend(PAPER_INDUSTRY_EFFECTS.iter().map(|e| e.0));
        beta1.extend(PAPER_SIZE_EFFECTS.iter().map(|e| e.0));
        beta1.push(5.54);
        beta1.extend((0..n_districts).map(|_| re.sample(&mut rng)));
        let mut beta2 = vec![-3.2];
        beta2.extend(PAPER_INDUSTRY_EFFECTS.iter().map(|e| e.1));
        beta2.extend(PAPER_SIZE_EFFECTS.iter().map(|e| e.1));
        beta2.push(4.0);
        let mut config = DgpConfig {
            copula: CopulaSpec::new(CopulaFamily::Gumbel, 1.93)?,
            selection_link: LinkFunction::Probit,
            outcome_link: LinkFunction::Logit,
            selection_terms: vec![
                TermSpec::Intercept,
                TermSpec::Factor("industry".into()),
                TermSpec::Factor("size".into()),
                TermSpec::Linear("complaints".into()),
                TermSpec::RandomEffect("district".into()),
            ],
            outcome_terms: vec![
                TermSpec::Intercept,
                TermSpec::Factor("industry".into()),
                TermSpec::Factor("size".into()),
                TermSpec::Linear("unemployment".into()),
            ],
            true_beta1: beta1,
            true_beta2: beta2,
            covariates,
            population_size,
            seed,
        };
        config.tune_intercepts(Some(0.0297), Some(0.057))?;
        Ok(config)
    }

    /// A compact scenario: `n_districts` districts, one industry, the four
    /// size classes in equal proportion. Selection uses size and a strong
    /// complaints instrument; the outcome uses size and unemployment.
    pub fn compact(
        copula: CopulaSpec,
        selection_link: LinkFunction,
        outcome_link: LinkFunction,
        n_districts: usize,
        population_size: u64,
        seed: u64,
    ) -> DgpConfig {
        let mut covs = BTreeMap::new();
        covs.insert(
            "complaints".to_string(),
            BetaSpec {
                alpha: 2.0,
                beta: 2.0,
                scale: 1.0,
            },
        );
        covs.insert(
            "unemployment".to_string(),
            BetaSpec {
                alpha: 2.0,
                beta: 2.0,
                scale: 1.0,
            },
        );
        DgpConfig {
            copula,
            selection_link,
            outcome_link,
            selection_terms: vec![
                TermSpec::Intercept,
                TermSpec::Factor("size".into()),
                TermSpec::Linear("complaints".into()),
            ],
            outcome_terms: vec![
                TermSpec::Intercept,
                TermSpec::Factor("size".into()),
                TermSpec::Linear("unemployment".into()),
            ],
            true_beta1: vec![-1.2, 0.3, 0.5, -0.3, 2.0],
            true_beta2: vec![-1.5, 0.4, -0.3, 0.6, 1.5],
            covariates: CovariateGenerator {
                n_districts,
                industries: vec![("G".to_string(), 1.0)],
                sizes: PAPER_SIZES.iter().map(|(s, _)| (*s, 1.0)).collect(),
                district_covariates: covs,
                district_weight_shape: None,
            },
            population_size,
            seed,
        }
    }

    /// Shifts the intercepts (first coefficient of each equation, which must
    /// be the intercept) so the frame hits the requested expected rates.
    pub fn tune_intercepts(
        &mut self,
        selection_rate: Option<f64>,
        prevalence: Option<f64>,
    ) -> Result<()> {
        for (eq, target) in [(0usize, selection_rate), (1, prevalence)] {
            let Some(target) = target else { continue };
            let terms = if eq == 0 {
                &self.selection_terms
            } else {
                &self.outcome_terms
            };
            if terms.first() != Some(&TermSpec::Intercept) {
                return Err(Error::Config(
                    "intercept tuning needs the intercept as first term".into(),
                ));
            }
            let frame = build_frame(self)?;
            let base = if eq == 0 {
                self.true_beta1[0]
            } else {
                self.true_beta2[0]
            };
            let link = if eq == 0 {
                self.selection_link
            } else {
                self.outcome_link
            };
            let rate = |shift: f64| -> f64 {
                let total = frame.total() as f64;
                frame
                    .strata
                    .iter()
                    .map(|s| {
                        let e = if eq == 0 { s.eta1 } else { s.eta2 };
                        s.n as f64 * link.prob_one(e + shift)
                    })
                    .sum::<f64>()
                    / total
            };
            let (mut lo, mut hi) = (-20.0, 20.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if rate(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let shift = 0.5 * (lo + hi);
            if eq == 0 {
                self.true_beta1[0] = base + shift;
            } else {
                self.true_beta2[0] = base + shift;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    /// Model fitted in each replicate; defaults to the data-generating one.
    pub fit_spec: Option<ModelSpec>,
    pub fit: FitOptions,
    /// Posterior intervals for the GH estimate; skipped when `None`.
    pub posterior: Option<PosteriorOptions>,
    /// Propensity terms; default to the fitted selection terms.
    pub propensity_terms: Option<Vec<TermSpec>>,
    pub propensity_lambda: f64,
    /// Keep fitted coefficient vectors in the replicate records.
    pub keep_coefficients: bool,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            fit_spec: None,
            fit: FitOptions::default(),
            posterior: Some(PosteriorOptions::default()),
            propensity_terms: None,
            propensity_lambda: 1.0,
            keep_coefficients: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub truth: f64,
    pub realized: f64,
    pub selected_rate: f64,
    pub gh: Option<f64>,
    pub gh_lower: Option<f64>,
    pub gh_upper: Option<f64>,
    pub naive: f64,
    pub naive_among_selected: f64,
    pub ps_weighted: Option<f64>,
    pub theta: Option<f64>,
    pub converged: bool,
    pub coefficients: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub replicates: usize,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of the mean.
    pub mc_se: f64,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub replicates: usize,
    pub failures: usize,
    pub truth: f64,
    pub summaries: Vec<EstimatorSummary>,
    pub records: Vec<ReplicateRecord>,
}

impl SimulationReport {
    pub fn summary(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }
}

fn summarize(name: &str, values: &[f64], truth: f64, coverage: Option<f64>) -> EstimatorSummary {
    let k = values.len();
    let mean = if k == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / k as f64
    };
    let mse = values
        .iter()
        .map(|v| (v - truth) * (v - truth))
        .sum::<f64>()
        / k as f64;
    let var = if k > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    EstimatorSummary {
        estimator: name.to_string(),
        replicates: k,
        mean,
        bias: mean - truth,
        rmse: mse.sqrt(),
        mc_se: (var / k as f64).sqrt(),
        coverage,
    }
}

/// Runs one replicate on a prepared frame.
pub fn run_replicate(
    frame: &PopulationFrame,
    population: &CountTable,
    spec: &ModelSpec,
    options: &EvaluationOptions,
    index: usize,
    seed: u64,
) -> ReplicateRecord {
    let truth = frame.expected_prevalence();
    let mut record = ReplicateRecord {
        index,
        seed,
        truth,
        realized: f64::NAN,
        selected_rate: f64::NAN,
        gh: None,
        gh_lower: None,
        gh_upper: None,
        naive: f64::NAN,
        naive_among_selected: f64::NAN,
        ps_weighted: None,
        theta: None,
        converged: false,
        coefficients: None,
        error: None,
    };
    let sim = match simulate_from_frame(frame, seed) {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let table = &sim.table;
    let n = table.total();
    record.realized = sim.realized_prevalence;
    record.selected_rate = table.selected_total() as f64 / n as f64;
    record.naive = naive_prevalence(table, n)
        .map(|e| e.value)
        .unwrap_or(f64::NAN);
    record.naive_among_selected = naive_among_selected(table)
        .map(|e| e.value)
        .unwrap_or(f64::NAN);
    let ps_terms = options
        .propensity_terms
        .clone()
        .unwrap_or_else(|| spec.selection_terms.clone());
    record.ps_weighted = PropensityModel::fit(table, &ps_terms, options.propensity_lambda)
        .and_then(|p| ps_weighted_prevalence(table, &p, n))
        .map(|e| e.value)
        .ok();
    let fitted = match fit(spec, table, &options.fit) {
        Ok(f) => f,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.converged = fitted.converged;
    record.theta = Some(fitted.theta);
    if options.keep_coefficients {
        record.coefficients = Some(fitted.delta_hat.to_vec());
    }
    match gh_prevalence(&fitted, population) {
        Ok(e) => record.gh = Some(e.value),
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    }
    if let Some(post) = &options.posterior {
        let post = PosteriorOptions {
            seed: derive_seed(seed, 1),
            ..*post
        };
        match posterior_interval(&fitted, population, &post) {
            Ok(ci) => {
                record.gh_lower = Some(ci.lower);
                record.gh_upper = Some(ci.upper);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
    }
    if !fitted.converged {
        record.error = Some(format!(
            "fit did not converge: {}",
            fitted.diagnostics.join("; ")
        ));
    }
    record
}

/// Bias, RMSE and coverage of the estimators over `replicates` simulated
/// tables drawn from one fixed frame. Replicate `i` uses the seed
/// `derive_seed(config.seed, i)`, so results do not depend on scheduling.
pub fn evaluate_estimators(
    config: &DgpConfig,
    replicates: usize,
    options: &EvaluationOptions,
) -> Result<SimulationReport> {
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let frame = build_frame(config)?;
    let population = frame.population_table()?;
    let spec = options.fit_spec.clone().unwrap_or_else(|| ModelSpec {
        selection_terms: config.selection_terms.clone(),
        outcome_terms: config.outcome_terms.clone(),
        selection_link: config.selection_link,
        outcome_link: config.outcome_link,
        copula: config.copula.family(),
    });
    let records: Vec<ReplicateRecord> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            run_replicate(
                &frame,
                &population,
                &spec,
                options,
                i,
                derive_seed(config.seed, i as u64),
            )
        })
        .collect();
    Ok(report_from_records(frame.expected_prevalence(), records))
}

/// Summaries over replicates without errors.
pub fn report_from_records(truth: f64, records: Vec<ReplicateRecord>) -> SimulationReport {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let gh: Vec<f64> = ok.iter().filter_map(|r| r.gh).collect();
    let coverage = {
        let with: Vec<(f64, f64)> = ok
            .iter()
            .filter_map(|r| Some((r.gh_lower?, r.gh_upper?)))
            .collect();
        if with.is_empty() {
            None
        } else {
            Some(
                with.iter()
                    .filter(|(l, u)| *l <= truth && truth <= *u)
                    .count() as f64
                    / with.len() as f64,
            )
        }
    };
    let naive: Vec<f64> = ok.iter().map(|r| r.naive).collect();
    let among: Vec<f64> = ok.iter().map(|r| r.naive_among_selected).collect();
    let ps: Vec<f64> = ok.iter().filter_map(|r| r.ps_weighted).collect();
    SimulationReport {
        replicates: records.len(),
        failures: records.len() - ok.len(),
        truth,
        summaries: vec![
            summarize("gh", &gh, truth, coverage),
            summarize("naive", &naive, truth, None),
            summarize("naive_among_selected", &among, truth, None),
            summarize("ps_weighted", &ps, truth, None),
        ],
        records,
    }
}
