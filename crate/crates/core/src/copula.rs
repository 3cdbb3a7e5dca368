//! Bivariate copulas used to couple the selection and outcome margins.
//!
//! Five one-parameter families are supported. Each copula is evaluated in
//! closed form (the Normal family through the bivariate normal CDF) together
//! with its first partial derivatives in `u`, `v` and `θ`, which the
//! likelihood gradient needs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{bvn_cdf, bvn_pdf, integrate, norm_cdf, norm_quantile};

/// Inputs to partial derivatives are clamped into `[EDGE, 1 - EDGE]`.
pub const EDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Normal,
    Clayton,
    Joe,
    Gumbel,
    Amh,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 5] = [
        CopulaFamily::Normal,
        CopulaFamily::Clayton,
        CopulaFamily::Joe,
        CopulaFamily::Gumbel,
        CopulaFamily::Amh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Normal => "normal",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Joe => "joe",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Amh => "amh",
        }
    }

    /// Whether `theta` lies in the family's closed parameter space.
    pub fn admits(self, theta: f64) -> bool {
        if !theta.is_finite() {
            return false;
        }
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => (-1.0..=1.0).contains(&theta),
            CopulaFamily::Clayton => theta > 0.0,
            CopulaFamily::Joe => theta > 1.0,
            CopulaFamily::Gumbel => theta >= 1.0,
        }
    }

    /// Whether `theta` lies strictly inside the parameter space, i.e. is
    /// reachable through [`CopulaFamily::theta`].
    pub fn is_interior(self, theta: f64) -> bool {
        if !theta.is_finite() {
            return false;
        }
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => theta.abs() < 1.0,
            CopulaFamily::Clayton => theta > 0.0,
            CopulaFamily::Joe | CopulaFamily::Gumbel => theta > 1.0,
        }
    }

    /// Box on the unconstrained coordinate that keeps θ numerically inside
    /// its space.
    pub fn unconstrained_bounds(self) -> (f64, f64) {
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => (-8.0, 8.0),
            CopulaFamily::Clayton => (-12.0, 100f64.ln()),
            CopulaFamily::Joe | CopulaFamily::Gumbel => (-12.0, 99f64.ln()),
        }
    }

    /// θ = g(θ*): tanh for Normal/AMH, exp for Clayton, 1 + exp for
    /// Gumbel/Joe. The argument is clamped to [`Self::unconstrained_bounds`].
    pub fn theta(self, star: UnconstrainedTheta) -> f64 {
        let (lo, hi) = self.unconstrained_bounds();
        let s = star.0.clamp(lo, hi);
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => s.tanh(),
            CopulaFamily::Clayton => s.exp(),
            CopulaFamily::Joe | CopulaFamily::Gumbel => 1.0 + s.exp(),
        }
    }

    /// dθ/dθ* at the given unconstrained value (zero outside the bounds).
    pub fn theta_derivative(self, star: UnconstrainedTheta) -> f64 {
        let (lo, hi) = self.unconstrained_bounds();
        if star.0 < lo || star.0 > hi {
            return 0.0;
        }
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => {
                let t = star.0.tanh();
                1.0 - t * t
            }
            CopulaFamily::Clayton | CopulaFamily::Joe | CopulaFamily::Gumbel => star.0.exp(),
        }
    }

    /// Inverse of [`CopulaFamily::theta`]; boundary values are rejected.
    pub fn unconstrained(self, theta: f64) -> Result<UnconstrainedTheta> {
        if !self.is_interior(theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} is not interior to the {self} parameter space"
            )));
        }
        let s = match self {
            CopulaFamily::Normal | CopulaFamily::Amh => theta.atanh(),
            CopulaFamily::Clayton => theta.ln(),
            CopulaFamily::Joe | CopulaFamily::Gumbel => (theta - 1.0).ln(),
        };
        Ok(UnconstrainedTheta(s))
    }

    /// θ giving the independence copula, if the family contains it.
    pub fn independence_theta(self) -> Option<f64> {
        match self {
            CopulaFamily::Normal | CopulaFamily::Amh => Some(0.0),
            CopulaFamily::Gumbel => Some(1.0),
            CopulaFamily::Clayton | CopulaFamily::Joe => None,
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "n" | "gaussian" => Ok(CopulaFamily::Normal),
            "clayton" | "c0" => Ok(CopulaFamily::Clayton),
            "joe" | "j0" => Ok(CopulaFamily::Joe),
            "gumbel" | "g0" => Ok(CopulaFamily::Gumbel),
            "amh" | "ali-mikhail-haq" => Ok(CopulaFamily::Amh),
            other => Err(Error::Config(format!("unknown copula family `{other}`"))),
        }
    }
}

/// The optimizer's coordinate for the association parameter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnconstrainedTheta(pub f64);

/// A copula family with a valid association parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    family: CopulaFamily,
    theta: f64,
}

/// C together with its first partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CopulaEval {
    pub c: f64,
    pub du: f64,
    pub dv: f64,
    pub dtheta: f64,
}

impl CopulaSpec {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        if !family.admits(theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} outside the {family} parameter space"
            )));
        }
        Ok(CopulaSpec { family, theta })
    }

    pub fn from_unconstrained(family: CopulaFamily, star: UnconstrainedTheta) -> Self {
        CopulaSpec {
            family,
            theta: family.theta(star),
        }
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn unconstrained(&self) -> Result<UnconstrainedTheta> {
        self.family.unconstrained(self.theta)
    }

    /// C(u, v; θ) for u, v in [0, 1].
    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        check_closed(u, v)?;
        Ok(self.cdf_unchecked(u, v))
    }

    /// ∂C/∂u, the conditional distribution P(V ≤ v | U = u), for u, v in (0, 1).
    pub fn partial_u(&self, u: f64, v: f64) -> Result<f64> {
        check_open(u, v)?;
        Ok(self.partial_u_unchecked(clamp_edge(u), clamp_edge(v)))
    }

    /// ∂C/∂v for u, v in (0, 1).
    pub fn partial_v(&self, u: f64, v: f64) -> Result<f64> {
        check_open(u, v)?;
        // All five families are exchangeable.
        Ok(self.partial_u_unchecked(clamp_edge(v), clamp_edge(u)))
    }

    /// ∂C/∂θ for u, v in (0, 1).
    pub fn partial_theta(&self, u: f64, v: f64) -> Result<f64> {
        check_open(u, v)?;
        Ok(self.eval(clamp_edge(u), clamp_edge(v)).dtheta)
    }

    pub(crate) fn cdf_unchecked(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        let c = match self.family {
            CopulaFamily::Normal if self.theta >= 1.0 => u.min(v),
            CopulaFamily::Normal if self.theta <= -1.0 => (u + v - 1.0).max(0.0),
            CopulaFamily::Normal => bvn_cdf(norm_quantile(u), norm_quantile(v), self.theta),
            _ => self.eval(u, v).c,
        };
        c.clamp((u + v - 1.0).max(0.0), u.min(v))
    }

    pub(crate) fn partial_u_unchecked(&self, u: f64, v: f64) -> f64 {
        let t = self.theta;
        let d = match self.family {
            CopulaFamily::Normal if t >= 1.0 => step(v - u),
            CopulaFamily::Normal if t <= -1.0 => step(v - (1.0 - u)),
            CopulaFamily::Normal => {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                norm_cdf((y - t * x) / ((1.0 - t) * (1.0 + t)).sqrt())
            }
            CopulaFamily::Clayton => clayton(t, u, v).du,
            CopulaFamily::Gumbel => gumbel(t, u, v).du,
            CopulaFamily::Joe => joe(t, u, v).du,
            CopulaFamily::Amh => amh(t, u, v).du,
        };
        d.clamp(0.0, 1.0)
    }

    /// Value and partials at an interior point; callers clamp beforehand.
    pub(crate) fn eval(&self, u: f64, v: f64) -> CopulaEval {
        let t = self.theta;
        match self.family {
            CopulaFamily::Normal => normal(t, u, v),
            CopulaFamily::Clayton => clayton(t, u, v),
            CopulaFamily::Gumbel => gumbel(t, u, v),
            CopulaFamily::Joe => joe(t, u, v),
            CopulaFamily::Amh => amh(t, u, v),
        }
    }

    /// Kendall's τ of the copula.
    pub fn kendall_tau(&self) -> f64 {
        let t = self.theta;
        match self.family {
            CopulaFamily::Normal => 2.0 / PI * t.asin(),
            CopulaFamily::Clayton => t / (t + 2.0),
            CopulaFamily::Gumbel => 1.0 - 1.0 / t,
            CopulaFamily::Joe => 1.0 + 4.0 / (t * t) * joe_d2(t),
            CopulaFamily::Amh => amh_tau(t),
        }
    }
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(θ={})", self.family, self.theta)
    }
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

fn check_closed(u: f64, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!(
            "(u, v) = ({u}, {v}) outside [0, 1]²"
        )));
    }
    Ok(())
}

fn check_open(u: f64, v: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0) {
        return Err(Error::Domain(format!(
            "(u, v) = ({u}, {v}) outside (0, 1)²"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_edge(p: f64) -> f64 {
    p.clamp(EDGE, 1.0 - EDGE)
}

fn normal(rho: f64, u: f64, v: f64) -> CopulaEval {
    let x = norm_quantile(u);
    let y = norm_quantile(v);
    if rho.abs() >= 1.0 {
        let c = if rho > 0.0 {
            u.min(v)
        } else {
            (u + v - 1.0).max(0.0)
        };
        let (du, dv) = if rho > 0.0 {
            (step(v - u), step(u - v))
        } else {
            (step(v - (1.0 - u)), step(u - (1.0 - v)))
        };
        return CopulaEval {
            c,
            du,
            dv,
            dtheta: 0.0,
        };
    }
    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    CopulaEval {
        c: bvn_cdf(x, y, rho),
        du: norm_cdf((y - rho * x) / s),
        dv: norm_cdf((x - rho * y) / s),
        dtheta: bvn_pdf(x, y, rho),
    }
}

fn clayton(t: f64, u: f64, v: f64) -> CopulaEval {
    let lu = u.ln();
    let lv = v.ln();
    let pu = (-t * lu).exp(); // u^{-θ}
    let pv = (-t * lv).exp();
    // a = u^{-θ} + v^{-θ} - 1, formed from expm1 to survive small θ.
    let a = 1.0 + (-t * lu).exp_m1() + (-t * lv).exp_m1();
    let ln_a = ((-t * lu).exp_m1() + (-t * lv).exp_m1()).ln_1p();
    let c = (-ln_a / t).exp();
    let common = (-(1.0 / t + 1.0) * ln_a).exp(); // a^{-1/θ-1}
    CopulaEval {
        c,
        du: pu / u * common,
        dv: pv / v * common,
        dtheta: c * (ln_a / (t * t) + (pu * lu + pv * lv) / (t * a)),
    }
}

fn gumbel(t: f64, u: f64, v: f64) -> CopulaEval {
    let x = -u.ln();
    let y = -v.ln();
    let xt = x.powf(t);
    let yt = y.powf(t);
    let a = xt + yt;
    let b = a.powf(1.0 / t);
    let c = (-b).exp();
    let ratio = b / a; // A^{1/θ-1}
    let lx = x.ln();
    let ly = y.ln();
    let db = b * (-a.ln() / (t * t) + (xt * lx + yt * ly) / (t * a));
    CopulaEval {
        c,
        du: c * ratio * xt / x / u,
        dv: c * ratio * yt / y / v,
        dtheta: -c * db,
    }
}

fn joe(t: f64, u: f64, v: f64) -> CopulaEval {
    let lu = (-u).ln_1p(); // log(1-u)
    let lv = (-v).ln_1p();
    let a = (t * lu).exp(); // (1-u)^θ
    let b = (t * lv).exp();
    let one_m_a = -(t * lu).exp_m1();
    let one_m_b = -(t * lv).exp_m1();
    // G = a + b - ab = 1 - (1-a)(1-b); pick the form without cancellation.
    let direct = a + b - a * b;
    let (g, ln_g) = if direct < 0.5 {
        (direct, direct.ln())
    } else {
        (1.0 - one_m_a * one_m_b, (-one_m_a * one_m_b).ln_1p())
    };
    let g_pow = (ln_g / t).exp(); // G^{1/θ}
    let c = -(ln_g / t).exp_m1();
    let g_pow_m1 = g_pow / g; // G^{1/θ - 1}
    let dg = a * lu * one_m_b + b * lv * one_m_a;
    CopulaEval {
        c,
        du: a / (1.0 - u) * one_m_b * g_pow_m1,
        dv: b / (1.0 - v) * one_m_a * g_pow_m1,
        dtheta: -g_pow * (-ln_g / (t * t) + dg / (t * g)),
    }
}

fn amh(t: f64, u: f64, v: f64) -> CopulaEval {
    let ub = 1.0 - u;
    let vb = 1.0 - v;
    let d = 1.0 - t * ub * vb;
    let d2 = d * d;
    CopulaEval {
        c: u * v / d,
        du: v * (1.0 - t * vb) / d2,
        dv: u * (1.0 - t * ub) / d2,
        dtheta: u * v * ub * vb / d2,
    }
}

/// D₂(θ) = ∫₀¹ t log(t) (1 − t)^{2(1−θ)/θ} dt.
///
/// With s = 1 − t and s = w^m the integrand becomes bounded at w = 0 once
/// m ≥ θ/2; the remaining log singularity at w = 1 is integrable and left to
/// the adaptive rule.
pub fn joe_d2(theta: f64) -> f64 {
    let expo = 2.0 * (1.0 - theta) / theta;
    let m = (0.5 * theta).ceil().max(1.0);
    let integrand = move |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        let s = w.powf(m);
        if s >= 1.0 {
            return 0.0;
        }
        let jacobian_pow = ((m * (expo + 1.0) - 1.0) * w.ln()).exp();
        m * (1.0 - s) * (-s).ln_1p() * jacobian_pow
    };
    integrate(integrand, 0.0, 1.0, 1e-12).value
}

fn amh_tau(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        return 2.0 * t / 9.0 + t * t / 18.0 + t * t * t / 45.0;
    }
    if t >= 1.0 {
        return 1.0 / 3.0;
    }
    let om = 1.0 - t;
    1.0 - 2.0 / (3.0 * t * t) * (t + om * om * (-t).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(f: CopulaFamily, t: f64) -> CopulaSpec {
        CopulaSpec::new(f, t).unwrap()
    }

    #[test]
    fn independence_reductions() {
        let g = spec(CopulaFamily::Gumbel, 1.0);
        assert!((g.cdf(0.3, 0.7).unwrap() - 0.21).abs() < 1e-15);
        assert!((g.partial_u(0.3, 0.7).unwrap() - 0.7).abs() < 1e-14);
        let n = spec(CopulaFamily::Normal, 0.0);
        assert!((n.cdf(0.5, 0.5).unwrap() - 0.25).abs() < 1e-15);
        let a = spec(CopulaFamily::Amh, 0.0);
        assert!((a.cdf(0.2, 0.9).unwrap() - 0.18).abs() < 1e-15);
    }

    #[test]
    fn parameter_space_is_enforced() {
        assert!(CopulaSpec::new(CopulaFamily::Normal, 1.2).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Clayton, 0.0).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Joe, 1.0).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Gumbel, 0.99).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Amh, -1.01).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Gumbel, f64::NAN).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Gumbel, 1.0).is_ok());
        assert!(CopulaSpec::new(CopulaFamily::Amh, -1.0).is_ok());
    }

    #[test]
    fn domain_errors() {
        let c = spec(CopulaFamily::Clayton, 0.23);
        assert!(matches!(c.cdf(-0.1, 0.5), Err(Error::Domain(_))));
        assert!(matches!(c.cdf(0.5, 1.5), Err(Error::Domain(_))));
        assert!(matches!(c.partial_u(0.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(c.partial_u(0.5, 1.0), Err(Error::Domain(_))));
        assert!(c.cdf(0.0, 1.0).is_ok());
    }

    #[test]
    fn transforms() {
        let s = CopulaFamily::Clayton.theta(UnconstrainedTheta(0.0));
        assert_eq!(s, 1.0);
        assert_eq!(CopulaFamily::Gumbel.theta(UnconstrainedTheta(0.0)), 2.0);
        assert_eq!(CopulaFamily::Joe.theta(UnconstrainedTheta(0.0)), 2.0);
        let n = CopulaFamily::Normal.theta(UnconstrainedTheta(0.5108));
        assert!((n - 0.5108f64.tanh()).abs() < 1e-15);
        assert!((n - 0.4704).abs() < 5e-4);
        let back = CopulaFamily::Normal.unconstrained(n).unwrap();
        assert!((back.0 - 0.5108).abs() < 1e-10);
        assert!(CopulaFamily::Normal.unconstrained(1.0).is_err());
        assert!(CopulaFamily::Gumbel.unconstrained(1.0).is_err());
        assert!(CopulaFamily::Amh.unconstrained(-1.0).is_err());
    }

    #[test]
    fn transform_round_trip_interior() {
        for fam in CopulaFamily::ALL {
            for &t in &[-0.9, -0.3, 0.05, 0.47, 0.93, 1.01, 1.93, 3.5, 16.1, 40.0] {
                if !fam.is_interior(t) {
                    continue;
                }
                let star = fam.unconstrained(t).unwrap();
                let back = fam.theta(star);
                assert!(
                    (back - t).abs() <= 1e-12 * t.abs().max(1.0),
                    "{fam} {t} {back}"
                );
            }
        }
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        for fam in CopulaFamily::ALL {
            for s in [-1.3, 0.0, 0.7, 2.1] {
                let h = 1e-6;
                let fd = (fam.theta(UnconstrainedTheta(s + h))
                    - fam.theta(UnconstrainedTheta(s - h)))
                    / (2.0 * h);
                let an = fam.theta_derivative(UnconstrainedTheta(s));
                assert!((fd - an).abs() < 1e-8 * an.abs().max(1.0), "{fam} {s}");
            }
        }
    }

    #[test]
    fn kendall_tau_closed_forms() {
        let g = spec(CopulaFamily::Gumbel, 1.93).kendall_tau();
        assert!((g - (1.0 - 1.0 / 1.93)).abs() < 1e-15);
        assert!((g - 0.48187).abs() < 1e-5);
        assert!((spec(CopulaFamily::Normal, 1.0).kendall_tau() - 1.0).abs() < 1e-15);
        let c = spec(CopulaFamily::Clayton, 0.23).kendall_tau();
        assert!((c - 0.10314).abs() < 1e-5);
        assert!((spec(CopulaFamily::Amh, 1.0).kendall_tau() - 1.0 / 3.0).abs() < 1e-15);
    }

    // Independent route: τ_Joe = 1 − 4 Σ_k 1 / (k (θk + 2)(θ(k − 1) + 2)).
    fn joe_tau_series(t: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..2_000_000u64 {
            let k = k as f64;
            s += 1.0 / (k * (t * k + 2.0) * (t * (k - 1.0) + 2.0));
        }
        1.0 - 4.0 * s
    }

    #[test]
    fn joe_tau_quadrature_matches_series() {
        for t in [1.05, 1.5, 2.0, 3.0, 8.0, 16.1, 60.0] {
            let q = spec(CopulaFamily::Joe, t).kendall_tau();
            let s = joe_tau_series(t);
            assert!((q - s).abs() < 1e-9, "theta={t}: {q} vs {s}");
        }
    }

    #[test]
    fn amh_tau_series_is_continuous() {
        for t in [-1e-4f64, -0.99e-4, 0.99e-4, 1e-4] {
            let series = 2.0 * t / 9.0 + t * t / 18.0 + t * t * t / 45.0;
            let om = 1.0 - t;
            let closed = 1.0 - 2.0 / (3.0 * t * t) * (t + om * om * (-t).ln_1p());
            assert!((series - closed).abs() < 1e-8, "{t}");
        }
        assert_eq!(spec(CopulaFamily::Amh, 0.0).kendall_tau(), 0.0);
        let v = spec(CopulaFamily::Amh, -1.0).kendall_tau();
        assert!((v - (1.0 - 2.0 / 3.0 * (-1.0 + 4.0 * 2f64.ln()))).abs() < 1e-14);
    }

    #[test]
    fn normal_comonotone_boundary() {
        let c = spec(CopulaFamily::Normal, 1.0);
        assert_eq!(c.cdf(0.5, 0.5).unwrap(), 0.5);
        assert_eq!(c.cdf(0.3, 0.8).unwrap(), 0.3);
        let w = spec(CopulaFamily::Normal, -1.0);
        assert_eq!(w.cdf(0.3, 0.8).unwrap(), (0.3f64 + 0.8 - 1.0).max(0.0));
    }

    #[test]
    fn partial_derivatives_match_finite_differences() {
        let cases = [
            (CopulaFamily::Normal, 0.472),
            (CopulaFamily::Clayton, 0.23),
            (CopulaFamily::Clayton, 4.0),
            (CopulaFamily::Joe, 16.1),
            (CopulaFamily::Joe, 1.3),
            (CopulaFamily::Gumbel, 1.93),
            (CopulaFamily::Amh, 0.934),
            (CopulaFamily::Amh, -0.6),
        ];
        let h = 1e-6;
        for (fam, t) in cases {
            let c = spec(fam, t);
            for &u in &[0.05, 0.2, 0.5, 0.83] {
                for &v in &[0.1, 0.4, 0.9] {
                    let fd_u = (c.cdf(u + h, v).unwrap() - c.cdf(u - h, v).unwrap()) / (2.0 * h);
                    let fd_v = (c.cdf(u, v + h).unwrap() - c.cdf(u, v - h).unwrap()) / (2.0 * h);
                    let an_u = c.partial_u(u, v).unwrap();
                    let an_v = c.partial_v(u, v).unwrap();
                    assert!(
                        (fd_u - an_u).abs() <= 1e-5 * an_u.abs().max(1e-3),
                        "{fam} {t} du at ({u},{v}): {fd_u} vs {an_u}"
                    );
                    assert!(
                        (fd_v - an_v).abs() <= 1e-5 * an_v.abs().max(1e-3),
                        "{fam} {t} dv at ({u},{v})"
                    );
                    let ht = 1e-6 * t.abs().max(1.0);
                    let up = CopulaSpec::new(fam, t + ht).unwrap().cdf(u, v).unwrap();
                    let dn = CopulaSpec::new(fam, t - ht).unwrap().cdf(u, v).unwrap();
                    let fd_t = (up - dn) / (2.0 * ht);
                    let an_t = c.partial_theta(u, v).unwrap();
                    assert!(
                        (fd_t - an_t).abs() <= 1e-6 * an_t.abs().max(1e-2),
                        "{fam} {t} dθ at ({u},{v}): {fd_t} vs {an_t}"
                    );
                }
            }
        }
    }
}
