use serde::{Deserialize, Serialize};

use super::{Cohort, IndividualRecord};
use crate::error::{Error, Result};
use crate::numkit::{expit, fit_logistic, GlmFit, IrlsOptions, Matrix};

/// Lower bound on the estimated probability of being observed.
pub const G_MIN: f64 = 0.025;

/// Proportion infected among members who remain uncensored and are
/// measured at follow-up, with that count as denominator.
pub fn cumulative_incidence_empirical(cohort: &[IndividualRecord]) -> Result<(f64, usize)> {
    if cohort.is_empty() {
        return Err(Error::invalid("empty cohort"));
    }
    let mut cases = 0usize;
    let mut denom = 0usize;
    for r in cohort {
        r.validate()?;
        if r.observed() {
            denom += 1;
            if r.outcome == Some(true) {
                cases += 1;
            }
        }
    }
    if denom == 0 {
        return Err(Error::EmptyMeasured);
    }
    Ok((cases as f64 / denom as f64, denom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedIncidence {
    pub estimate: f64,
    /// Measured, uncensored count.
    pub denominator: usize,
    /// Fluctuation coefficient on the clever covariate.
    pub epsilon: f64,
    /// Σ_measured (I − Q*)/ĝ after targeting.
    pub score: f64,
    pub warnings: Vec<String>,
}

/// Cumulative incidence adjusted for informative censoring and
/// measurement on `adjustment_vars`:
///
/// 1. logistic outcome regression of I on W among the observed;
/// 2. logistic regression of being observed on W, bounded below at
///    [`G_MIN`];
/// 3. one-dimensional logistic fluctuation of the outcome regression with
///    clever covariate 1/ĝ(W) among the observed;
/// 4. average of targeted predictions over the whole cohort.
///
/// With no adjustment variables this is exactly the empirical proportion.
pub fn cumulative_incidence_tmle(cohort: &Cohort, adjustment_vars: &[&str]) -> Result<TargetedIncidence> {
    let (empirical, denominator) = cumulative_incidence_empirical(&cohort.records)?;
    if adjustment_vars.is_empty() {
        return Ok(TargetedIncidence {
            estimate: empirical,
            denominator,
            epsilon: 0.0,
            score: 0.0,
            warnings: Vec::new(),
        });
    }
    let mut warnings = Vec::new();
    let n = cohort.records.len();
    let design = cohort.design(adjustment_vars)?;
    let observed: Vec<usize> = (0..n).filter(|&i| cohort.records[i].observed()).collect();
    let opts = IrlsOptions::default();

    // Outcome regression among the observed.
    let x_obs = design.select_rows(&observed);
    let y_obs: Vec<f64> = observed
        .iter()
        .map(|&i| if cohort.records[i].outcome == Some(true) { 1.0 } else { 0.0 })
        .collect();
    let q_fit = fit_logistic(&x_obs, &y_obs, &vec![1.0; observed.len()], &vec![0.0; observed.len()], opts)?;
    if !q_fit.converged {
        warnings.push(format!(
            "outcome regression did not converge after {} iterations",
            q_fit.iterations
        ));
    }
    let eta: Vec<f64> = (0..n).map(|i| q_fit.linear_predictor(design.row(i))).collect();

    // Observation mechanism over the whole cohort.
    let delta: Vec<f64> = cohort
        .records
        .iter()
        .map(|r| if r.observed() { 1.0 } else { 0.0 })
        .collect();
    let g_fit = fit_logistic(&design, &delta, &vec![1.0; n], &vec![0.0; n], opts)?;
    if !g_fit.converged {
        warnings.push("observation-mechanism regression did not converge".into());
    }
    let mut truncated = 0usize;
    let g: Vec<f64> = g_fit
        .predict(&design, None)
        .into_iter()
        .map(|p| {
            if p < G_MIN {
                truncated += 1;
                G_MIN
            } else {
                p
            }
        })
        .collect();
    if truncated > 0 {
        warnings.push(format!(
            "observation probability bounded at {G_MIN} for {truncated} members"
        ));
    }

    // Fluctuation: logit Q* = logit Q + ε / ĝ.
    let h_obs: Vec<f64> = observed.iter().map(|&i| 1.0 / g[i]).collect();
    let off_obs: Vec<f64> = observed.iter().map(|&i| eta[i]).collect();
    let h_design = Matrix::from_vec(observed.len(), 1, h_obs.clone())?;
    let flu: GlmFit = fit_logistic(&h_design, &y_obs, &vec![1.0; observed.len()], &off_obs, opts)?;
    if !flu.converged {
        warnings.push("fluctuation did not converge".into());
    }
    let epsilon = flu.coefficients[0];
    let targeted: Vec<f64> = (0..n).map(|i| expit(eta[i] + epsilon / g[i])).collect();
    let estimate = targeted.iter().sum::<f64>() / n as f64;
    let score = observed
        .iter()
        .zip(&y_obs)
        .map(|(&i, y)| (y - targeted[i]) / g[i])
        .sum();
    Ok(TargetedIncidence {
        estimate,
        denominator,
        epsilon,
        score,
        warnings,
    })
}

/// Incidence rate per 100 person-years. Observed members contribute
/// `followup_years` (aligned with `cohort`), seroconverters half of it.
pub fn incidence_rate_midpoint(cohort: &[IndividualRecord], followup_years: &[f64]) -> Result<f64> {
    if cohort.len() != followup_years.len() {
        return Err(Error::invalid("follow-up times must align with records"));
    }
    let mut events = 0usize;
    let mut person_time = 0.0;
    for (r, &t) in cohort.iter().zip(followup_years) {
        r.validate()?;
        if !r.observed() {
            continue;
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InconsistentRecord {
                id: r.id.to_string(),
                rule: "follow-up must be positive for measured members".into(),
            });
        }
        if r.outcome == Some(true) {
            events += 1;
            person_time += 0.5 * t;
        } else {
            person_time += t;
        }
    }
    if person_time <= 0.0 {
        return Err(Error::ZeroPersonTime);
    }
    Ok(100.0 * events as f64 / person_time)
}
