//! Penalized binary regression on weighted rows, fitted by Fisher scoring.
//! Used for starting values of the selection model and for propensity scores.

use nalgebra::{DMatrix, DVector};

use crate::design::{Predictor, TermSpec};
use crate::error::{Error, Result};
use crate::linalg::solve_spd_with_ridge;
use crate::links::{clamp_prob, LinkFunction};

#[derive(Debug, Clone)]
pub struct BinaryGlm {
    pub beta: Vec<f64>,
    pub link: LinkFunction,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BinaryGlm {
    pub fn fitted(&self, design: &Predictor) -> Vec<f64> {
        design
            .eta(&self.beta)
            .into_iter()
            .map(|e| self.link.prob_one(e))
            .collect()
    }
}

/// Maximizes Σ w_r [y_r log π_r + (1 − y_r) log(1 − π_r)] − ½ Σ_k λ_k βᵀS_kβ
/// where y_r ∈ [0, 1] is a row's success fraction and w_r its weight.
/// `lambdas` has one entry per penalized block of `design`.
pub fn fit_binary_glm(
    design: &Predictor,
    y: &[f64],
    w: &[f64],
    link: LinkFunction,
    lambdas: &[f64],
    max_iter: usize,
) -> Result<BinaryGlm> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n || w.len() != n {
        return Err(Error::Numerical(
            "response length does not match design".into(),
        ));
    }
    let penalties = design.penalties();
    if penalties.len() != lambdas.len() {
        return Err(Error::Numerical(format!(
            "{} smoothing parameters given for {} penalized blocks",
            lambdas.len(),
            penalties.len()
        )));
    }
    let total_w: f64 = w.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::Data("binary regression on an empty table".into()));
    }
    let mut s = DMatrix::zeros(p, p);
    for ((range, pen), &lam) in penalties.iter().zip(lambdas) {
        let mut view = s.view_mut((range.start, range.start), (range.len(), range.len()));
        view += *pen * lam;
    }

    let mut beta = vec![0.0; p];
    if let Some(pos) = design
        .recipe
        .terms
        .iter()
        .position(|t| t.term() == TermSpec::Intercept)
    {
        let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total_w;
        let col = design.coefficient_slices[pos].start;
        beta[col] = link.quantile(ybar.clamp(1e-6, 1.0 - 1e-6))?;
    }

    let objective = |b: &[f64]| -> f64 {
        let eta = design.eta(b);
        let mut ll = 0.0;
        for r in 0..n {
            if w[r] == 0.0 {
                continue;
            }
            let pi = clamp_prob(link.prob_one(eta[r]));
            let q = clamp_prob(link.prob_zero(eta[r]));
            ll += w[r] * (y[r] * pi.ln() + (1.0 - y[r]) * q.ln());
        }
        let bv = DVector::from_column_slice(b);
        ll - 0.5 * bv.dot(&(&s * &bv))
    };

    let mut current = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let design_rows = design.design();
    while iterations < max_iter {
        iterations += 1;
        let eta = design.eta(&beta);
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for r in 0..n {
            if w[r] == 0.0 {
                continue;
            }
            let pi = clamp_prob(link.prob_one(eta[r]));
            let d = link.prob_one_derivative(eta[r]);
            let var = pi * (1.0 - pi);
            let sc = w[r] * (y[r] - pi) * d / var;
            let wt = w[r] * d * d / var;
            let (cols, vals) = design_rows.row(r);
            for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                score[ca] += sc * va;
                for (&cb, &vb) in cols[..=a].iter().zip(vals) {
                    info[(ca, cb)] += wt * va * vb;
                }
            }
        }
        info.fill_upper_triangle_with_lower_triangle();
        info += &s;
        let bv = DVector::from_column_slice(&beta);
        score -= &s * &bv;
        if score.amax() < 1e-8 * total_w.max(1.0) {
            converged = true;
            break;
        }
        let (step, _) = solve_spd_with_ridge(&info, &score)
            .ok_or_else(|| Error::Numerical("singular information in binary regression".into()))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, d)| b + alpha * d)
                .collect();
            let value = objective(&trial);
            if value.is_finite() && value >= current - 1e-12 * current.abs() {
                let change = (value - current).abs();
                beta = trial;
                current = value;
                accepted = true;
                if change <= 1e-12 * (current.abs() + 1.0) && alpha == 1.0 {
                    converged = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || converged {
            converged |= !accepted && score.amax() < 1e-4 * total_w.max(1.0);
            break;
        }
    }

    let bv = DVector::from_column_slice(&beta);
    Ok(BinaryGlm {
        loglik: current + 0.5 * bv.dot(&(&s * &bv)),
        beta,
        link,
        converged,
        iterations,
    })
}
