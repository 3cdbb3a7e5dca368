//! Marginal link functions for the selection and outcome equations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

/// Lower clamp applied to every probability before it is logged.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// A link's CDF `F`, with P(Y = 1) = 1 − F(−η).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Probit,
    Logit,
    Cloglog,
}

impl LinkFunction {
    pub const ALL: [LinkFunction; 3] = [
        LinkFunction::Probit,
        LinkFunction::Logit,
        LinkFunction::Cloglog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkFunction::Probit => "probit",
            LinkFunction::Logit => "logit",
            LinkFunction::Cloglog => "cloglog",
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, LinkFunction::Cloglog)
    }

    /// F(η), clamped into [PROB_EPS, 1 − PROB_EPS].
    pub fn cdf(self, eta: f64) -> f64 {
        clamp_prob(self.cdf_raw(eta))
    }

    /// F(η) without clamping; equals P(Y = 0) at −η.
    pub fn cdf_raw(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => norm_cdf(eta),
            LinkFunction::Logit => logistic(eta),
            LinkFunction::Cloglog => -(-eta.exp()).exp_m1(),
        }
    }

    /// F′(η).
    pub fn density(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => norm_pdf(eta),
            LinkFunction::Logit => {
                let e = (-eta.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            LinkFunction::Cloglog => (eta - eta.exp()).exp(),
        }
    }

    /// F⁻¹(p) for p in (0, 1).
    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "link quantile needs p in (0, 1), got {p}"
            )));
        }
        Ok(match self {
            LinkFunction::Probit => norm_quantile(p),
            LinkFunction::Logit => p.ln() - (-p).ln_1p(),
            LinkFunction::Cloglog => (-(-p).ln_1p()).ln(),
        })
    }

    /// P(Y = 1) = 1 − F(−η), evaluated without cancellation and unclamped.
    pub fn prob_one(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => norm_cdf(eta),
            LinkFunction::Logit => logistic(eta),
            LinkFunction::Cloglog => (-(-eta).exp()).exp(),
        }
    }

    /// P(Y = 0) = F(−η), unclamped.
    pub fn prob_zero(self, eta: f64) -> f64 {
        self.cdf_raw(-eta)
    }

    /// d/dη [1 − F(−η)] = F′(−η).
    pub fn prob_one_derivative(self, eta: f64) -> f64 {
        self.density(-eta)
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probit" => Ok(LinkFunction::Probit),
            "logit" => Ok(LinkFunction::Logit),
            "cloglog" => Ok(LinkFunction::Cloglog),
            other => Err(Error::Config(format!("unknown link function `{other}`"))),
        }
    }
}
