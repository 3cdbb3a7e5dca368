//! Declarative model specifications read from TOML.
//!
//! ```toml
//! copula = "gumbel"
//! selection_link = "probit"
//! outcome_link = "logit"
//! selection = ["intercept", "factor(industry)", "factor(size)", "linear(complaints)", "re(district)"]
//! outcome = ["intercept", "factor(industry)", "factor(size)", "s(unemployment, 10)"]
//!
//! [smoothing]          # optional; AIC search on ln λ unless `lambdas` is set
//! sweeps = 2
//!
//! [start]              # optional starting θ per copula family
//! gumbel = 1.5
//!
//! [fit]
//! max_iter = 100
//!
//! [[variants]]         # alternative term sets for the sensitivity table
//! outcome = ["intercept", "s(unemployment)"]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::design::TermSpec;
use crate::error::{Error, Result};
use crate::links::LinkFunction;
use crate::model::{FitOptions, LambdaChoice, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Fixed λ per penalized block (selection blocks first); disables the search.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_lower")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_sweeps() -> usize {
    2
}
fn default_lower() -> f64 {
    -8.0
}
fn default_upper() -> f64 {
    8.0
}
fn default_tol() -> f64 {
    0.05
}
fn default_max_iter() -> usize {
    100
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            lambdas: None,
            sweeps: default_sweeps(),
            lower: default_lower(),
            upper: default_upper(),
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Population size for BIC; defaults to the table total.
    #[serde(default)]
    pub bic_n: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: default_max_iter(),
            bic_n: None,
        }
    }
}

/// A term set replacing the base selection and/or outcome terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    #[serde(default)]
    pub selection: Option<Vec<TermSpec>>,
    #[serde(default)]
    pub outcome: Option<Vec<TermSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub copula: CopulaFamily,
    pub selection_link: LinkFunction,
    pub outcome_link: LinkFunction,
    pub selection: Vec<TermSpec>,
    pub outcome: Vec<TermSpec>,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub start: BTreeMap<CopulaFamily, f64>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
}

impl ModelConfig {
    pub fn from_toml_str(s: &str) -> Result<ModelConfig> {
        let config: ModelConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ModelConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.selection.is_empty() || self.outcome.is_empty() {
            return Err(Error::Config(
                "both equations need at least one term".into(),
            ));
        }
        // Start values outside a family's space are not rejected here; the
        // fit of that family fails and a model grid reports it per cell.
        if self.start.values().any(|t| !t.is_finite()) {
            return Err(Error::Config("start values must be finite".into()));
        }
        let s = &self.smoothing;
        if let Some(l) = &s.lambdas {
            if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(
                    "smoothing parameters must be finite and nonnegative".into(),
                ));
            }
        }
        if s.sweeps == 0 || s.lower >= s.upper || s.tol <= 0.0 {
            return Err(Error::Config(
                "smoothing search needs sweeps ≥ 1, lower < upper and tol > 0".into(),
            ));
        }
        if self.fit.max_iter == 0 {
            return Err(Error::Config("fit.max_iter must be positive".into()));
        }
        if matches!(self.fit.bic_n, Some(n) if !(n >= 1.0)) {
            return Err(Error::Config("fit.bic_n must be at least 1".into()));
        }
        for v in &self.variants {
            if matches!(&v.selection, Some(t) if t.is_empty())
                || matches!(&v.outcome, Some(t) if t.is_empty())
            {
                return Err(Error::Config("a variant lists an empty equation".into()));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            selection_terms: self.selection.clone(),
            outcome_terms: self.outcome.clone(),
            selection_link: self.selection_link,
            outcome_link: self.outcome_link,
            copula: self.copula,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        let s = &self.smoothing;
        FitOptions {
            max_iter: self.fit.max_iter,
            lambda: match &s.lambdas {
                Some(l) => LambdaChoice::Fixed(l.clone()),
                None => LambdaChoice::Search {
                    sweeps: s.sweeps,
                    lower: s.lower,
                    upper: s.upper,
                    tol: s.tol,
                },
            },
            start_theta: self.start.clone(),
            start: None,
            bic_n: self.fit.bic_n,
        }
    }

    /// The model spec of each variant, with unspecified equations taken
    /// from the base.
    pub fn variant_specs(&self) -> Vec<ModelSpec> {
        let base = self.model_spec();
        self.variants
            .iter()
            .map(|v| ModelSpec {
                selection_terms: v
                    .selection
                    .clone()
                    .unwrap_or_else(|| base.selection_terms.clone()),
                outcome_terms: v
                    .outcome
                    .clone()
                    .unwrap_or_else(|| base.outcome_terms.clone()),
                ..base.clone()
            })
            .collect()
    }
}
