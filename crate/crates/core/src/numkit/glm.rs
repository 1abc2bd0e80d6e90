//! Weighted logistic regression by iteratively reweighted least squares.
//!
//! Responses may be fractional (quasi-binomial), which is what the
//! community-level fits need: their outcome is a cumulative incidence.

use super::dist::expit;
use super::linalg::{dot, solve_spd, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Relative deviance change below which iteration stops.
    pub deviance_tol: f64,
    /// Largest score component accepted as converged.
    pub score_tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 100,
            deviance_tol: 1e-10,
            score_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    /// Intercept first when the design has one.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// max_k |Σ_i w_i x_ik (y_i − μ_i)| at the returned coefficients.
    pub max_abs_score: f64,
    pub deviance: f64,
}

impl GlmFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(x, &self.coefficients)
    }

    /// Fitted probabilities for `design` with an optional offset.
    pub fn predict(&self, design: &Matrix, offset: Option<&[f64]>) -> Vec<f64> {
        (0..design.nrows())
            .map(|i| {
                let eta = self.linear_predictor(design.row(i)) + offset.map_or(0.0, |o| o[i]);
                expit(eta)
            })
            .collect()
    }
}

fn binomial_deviance(y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    fn ylogy(y: f64, m: f64) -> f64 {
        if y > 0.0 {
            y * (y / m).ln()
        } else {
            0.0
        }
    }
    y.iter()
        .zip(mu)
        .zip(w)
        .map(|((&y, &m), &w)| 2.0 * w * (ylogy(y, m) + ylogy(1.0 - y, 1.0 - m)))
        .sum()
}

/// Fitted probabilities numerically 0 or 1 on a weighted row: the
/// likelihood has no finite maximiser (separation).
fn at_boundary(mu: &[f64], w: &[f64]) -> bool {
    const EPS: f64 = 1e-10;
    mu.iter().zip(w).any(|(&m, &w)| w > 0.0 && (m < EPS || m > 1.0 - EPS))
}

struct Evaluation {
    mu: Vec<f64>,
    score: Vec<f64>,
    deviance: f64,
}

fn evaluate(design: &Matrix, y: &[f64], w: &[f64], offset: &[f64], beta: &[f64]) -> Evaluation {
    let p = design.ncols();
    let mut mu = Vec::with_capacity(y.len());
    let mut score = vec![0.0; p];
    for i in 0..design.nrows() {
        let x = design.row(i);
        let m = expit(dot(x, beta) + offset[i]);
        let r = w[i] * (y[i] - m);
        for k in 0..p {
            score[k] += x[k] * r;
        }
        mu.push(m);
    }
    let deviance = binomial_deviance(y, &mu, w);
    Evaluation { mu, score, deviance }
}

/// Maximise the weighted Bernoulli quasi-log-likelihood
/// `Σ w_i [y_i log μ_i + (1 − y_i) log(1 − μ_i)]`, `logit μ = Xβ + offset`.
///
/// Non-convergence (e.g. separation) is reported through
/// `GlmFit::converged`, keeping the last finite coefficients. A working
/// matrix that cannot be factorised is an error.
pub fn fit_logistic(
    design: &Matrix,
    response: &[f64],
    weights: &[f64],
    offset: &[f64],
    opts: IrlsOptions,
) -> Result<GlmFit> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n || weights.len() != n || offset.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: design has {n} rows, response {}, weights {}, offset {}",
            response.len(),
            weights.len(),
            offset.len()
        )));
    }
    if p == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if !design.is_finite()
        || response.iter().any(|y| !(0.0..=1.0).contains(y))
        || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
        || offset.iter().any(|o| !o.is_finite())
    {
        return Err(Error::invalid(
            "non-finite entries, response outside [0,1] or negative weights",
        ));
    }

    let mut beta = vec![0.0; p];
    let mut eval = evaluate(design, response, weights, offset, &beta);
    let mut prev_dev: Option<f64> = None;
    let mut iterations = 0;
    let mut info = vec![0.0; p * p];

    loop {
        let max_abs_score = eval.score.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
        let dev_settled = match prev_dev {
            Some(d0) => (eval.deviance - d0).abs() / (eval.deviance.abs() + 0.1) < opts.deviance_tol,
            // Already at the optimum before any step.
            None => max_abs_score == 0.0,
        };
        if dev_settled && max_abs_score <= opts.score_tol {
            return Ok(GlmFit {
                converged: !at_boundary(&eval.mu, weights),
                coefficients: beta,
                iterations,
                max_abs_score,
                deviance: eval.deviance,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(GlmFit {
                coefficients: beta,
                converged: false,
                iterations,
                max_abs_score,
                deviance: eval.deviance,
            });
        }

        info.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let x = design.row(i);
            let v = weights[i] * eval.mu[i] * (1.0 - eval.mu[i]);
            if v == 0.0 {
                continue;
            }
            for a in 0..p {
                let xa = x[a] * v;
                for b in 0..=a {
                    info[a * p + b] += xa * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[b * p + a] = info[a * p + b];
            }
        }
        iterations += 1;
        let step = solve_spd(&info, &eval.score, p, 1e-13).ok_or(Error::Singular {
            iteration: iterations,
        })?;
        let next: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        if next.iter().any(|b| !b.is_finite()) {
            let max_abs_score = eval.score.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
            return Ok(GlmFit {
                coefficients: beta,
                converged: false,
                iterations,
                max_abs_score,
                deviance: eval.deviance,
            });
        }
        beta = next;
        prev_dev = Some(eval.deviance);
        eval = evaluate(design, response, weights, offset, &beta);
    }
}
