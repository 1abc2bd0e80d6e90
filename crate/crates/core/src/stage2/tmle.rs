use std::collections::BTreeSet;

use super::{
    infer, normalized_weights, validate_pairs, validate_records, Adjustment, Arm, CommunityRecord,
    EffectEstimate, IcInput, IcUnit,
};
use crate::error::{Error, Result};
use crate::numkit::linalg::dot;
use crate::numkit::{expit, fit_logistic, IrlsOptions, Matrix};

/// Bounds on the estimated randomization probability.
pub const G_BOUNDS: (f64, f64) = (0.05, 0.95);

/// Region levels in name order; the first is the reference.
pub(crate) fn region_levels(communities: &[CommunityRecord]) -> Vec<String> {
    communities
        .iter()
        .map(|c| c.region.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn adjustment_columns(
    c: &CommunityRecord,
    adj: &Adjustment,
    levels: &[String],
    out: &mut Vec<f64>,
) -> Result<()> {
    match adj {
        Adjustment::None => {}
        Adjustment::Covariate(name) => out.push(c.covariates.get(name).copied().ok_or_else(|| {
            Error::invalid(format!("community '{}' lacks covariate '{name}'", c.id))
        })?),
        Adjustment::Region => {
            for level in levels.iter().skip(1) {
                out.push(if &c.region == level { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(())
}

fn outcome_row(c: &CommunityRecord, arm: Arm, q: &Adjustment, levels: &[String]) -> Result<Vec<f64>> {
    let mut row = vec![1.0, arm.indicator()];
    adjustment_columns(c, q, levels, &mut row)?;
    Ok(row)
}

fn exposure_row(c: &CommunityRecord, g: &Adjustment, levels: &[String]) -> Result<Vec<f64>> {
    let mut row = vec![1.0];
    adjustment_columns(c, g, levels, &mut row)?;
    Ok(row)
}

fn design<F>(communities: &[CommunityRecord], mut row: F) -> Result<Matrix>
where
    F: FnMut(&CommunityRecord) -> Result<Vec<f64>>,
{
    let rows: Vec<Vec<f64>> = communities.iter().map(&mut row).collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

/// Fitted outcome regression, exposure mechanism and fluctuation; can be
/// evaluated on communities outside the training set.
#[derive(Debug, Clone)]
pub struct TmleFit {
    pub q: Adjustment,
    pub g: Adjustment,
    levels: Vec<String>,
    q_coef: Vec<f64>,
    g_coef: Vec<f64>,
    /// Fluctuation coefficients for the (intervention, control) clever
    /// covariates.
    pub epsilon: [f64; 2],
    pub psi1: f64,
    pub psi0: f64,
    pub warnings: Vec<String>,
}

impl TmleFit {
    /// Fit on `communities` with weights rescaled to mean one.
    /// `levels` fixes the region coding across folds.
    pub fn fit(
        communities: &[CommunityRecord],
        q: &Adjustment,
        g: &Adjustment,
        levels: &[String],
    ) -> Result<Self> {
        validate_records(communities)?;
        let n = communities.len();
        let w = normalized_weights(communities);
        let opts = IrlsOptions::default();
        let mut warnings = Vec::new();

        // Initial outcome regression: Y ~ 1 + A + q.
        let xq = design(communities, |c| outcome_row(c, c.arm, q, levels))?;
        let y: Vec<f64> = communities.iter().map(|c| c.y).collect();
        let q_fit = fit_logistic(&xq, &y, &w, &vec![0.0; n], opts)?;
        if !q_fit.converged {
            warnings.push(format!("outcome regression ({q}) did not converge"));
        }

        // Exposure mechanism: A ~ 1 + g, unweighted.
        let xg = design(communities, |c| exposure_row(c, g, levels))?;
        let a: Vec<f64> = communities.iter().map(|c| c.arm.indicator()).collect();
        let g_fit = fit_logistic(&xg, &a, &vec![1.0; n], &vec![0.0; n], opts)?;
        if !g_fit.converged {
            warnings.push(format!("exposure regression ({g}) did not converge"));
        }

        let mut fit = TmleFit {
            q: q.clone(),
            g: g.clone(),
            levels: levels.to_vec(),
            q_coef: q_fit.coefficients,
            g_coef: g_fit.coefficients,
            epsilon: [0.0, 0.0],
            psi1: f64::NAN,
            psi0: f64::NAN,
            warnings,
        };

        // Fluctuation: logit Q* = logit Q + ε₁ H(1) + ε₀ H(0).
        let mut h = Vec::with_capacity(2 * n);
        let mut offset = Vec::with_capacity(n);
        for c in communities {
            let p1 = fit.g1(c)?;
            match c.arm {
                Arm::Intervention => h.extend_from_slice(&[1.0 / p1, 0.0]),
                Arm::Control => h.extend_from_slice(&[0.0, 1.0 / (1.0 - p1)]),
            }
            offset.push(fit.initial_logit(c, c.arm)?);
        }
        let xh = Matrix::from_vec(n, 2, h)?;
        match fit_logistic(&xh, &y, &w, &offset, opts) {
            Ok(f) if f.converged => fit.epsilon = [f.coefficients[0], f.coefficients[1]],
            Ok(_) | Err(_) => fit
                .warnings
                .push("fluctuation did not converge; using the initial outcome regression".into()),
        }

        let mut s1 = 0.0;
        let mut s0 = 0.0;
        for (c, wj) in communities.iter().zip(&w) {
            s1 += wj * fit.targeted(c, Arm::Intervention)?;
            s0 += wj * fit.targeted(c, Arm::Control)?;
        }
        fit.psi1 = s1 / n as f64;
        fit.psi0 = s0 / n as f64;
        Ok(fit)
    }

    fn initial_logit(&self, c: &CommunityRecord, arm: Arm) -> Result<f64> {
        Ok(dot(&outcome_row(c, arm, &self.q, &self.levels)?, &self.q_coef))
    }

    /// Bounded estimate of P(A = 1 | E).
    pub fn g1(&self, c: &CommunityRecord) -> Result<f64> {
        let eta = dot(&exposure_row(c, &self.g, &self.levels)?, &self.g_coef);
        Ok(expit(eta).clamp(G_BOUNDS.0, G_BOUNDS.1))
    }

    pub fn g(&self, c: &CommunityRecord, arm: Arm) -> Result<f64> {
        let p1 = self.g1(c)?;
        Ok(match arm {
            Arm::Intervention => p1,
            Arm::Control => 1.0 - p1,
        })
    }

    /// Targeted prediction Q*(a, E).
    pub fn targeted(&self, c: &CommunityRecord, arm: Arm) -> Result<f64> {
        let eps = match arm {
            Arm::Intervention => self.epsilon[0],
            Arm::Control => self.epsilon[1],
        };
        Ok(expit(self.initial_logit(c, arm)? + eps / self.g(c, arm)?))
    }

    /// `w · I(A = a)/g(a|E) · (Y − Q*(a, E))` for one community.
    pub fn ic(&self, c: &CommunityRecord, arm: Arm, weight: f64) -> Result<f64> {
        if c.arm != arm {
            return Ok(0.0);
        }
        Ok(weight / self.g(c, arm)? * (c.y - self.targeted(c, arm)?))
    }

    /// Per-community curves for both arms.
    pub fn ic_vectors(&self, communities: &[CommunityRecord], weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ic1 = Vec::with_capacity(communities.len());
        let mut ic0 = Vec::with_capacity(communities.len());
        for (c, w) in communities.iter().zip(weights) {
            ic1.push(self.ic(c, Arm::Intervention, *w)?);
            ic0.push(self.ic(c, Arm::Control, *w)?);
        }
        Ok((ic1, ic0))
    }
}

pub(crate) fn tmle_with_unit(
    communities: &[CommunityRecord],
    q: &Adjustment,
    g: &Adjustment,
    unit: IcUnit,
    df: u32,
) -> Result<EffectEstimate> {
    let levels = region_levels(communities);
    let fit = TmleFit::fit(communities, q, g, &levels)?;
    let w = normalized_weights(communities);
    let (ic1, ic0) = fit.ic_vectors(communities, &w)?;
    let mut est = infer(
        communities,
        IcInput {
            estimator: "tmle",
            psi1: fit.psi1,
            psi0: fit.psi0,
            ic1: &ic1,
            ic0: &ic0,
            unit,
            df,
        },
    )?;
    est.selected_q_var = q.label();
    est.selected_g_var = g.label();
    est.warnings = fit.warnings;
    Ok(est)
}

/// Targeted estimator of the incidence ratio with the outcome regression
/// adjusted for `q` and the randomization probability estimated with `g`.
/// Inference treats matched pairs as the independent units.
pub fn tmle_effect(
    communities: &[CommunityRecord],
    q: &Adjustment,
    g: &Adjustment,
) -> Result<EffectEstimate> {
    let pairs = validate_pairs(communities)?;
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two pairs"));
    }
    tmle_with_unit(communities, q, g, IcUnit::Pair, pairs.len() as u32 - 1)
}

pub(crate) fn unadjusted_with_unit(
    communities: &[CommunityRecord],
    unit: IcUnit,
    df: u32,
) -> Result<EffectEstimate> {
    validate_records(communities)?;
    let w = normalized_weights(communities);
    let arm_mean = |arm: Arm| {
        let (num, den) = communities
            .iter()
            .zip(&w)
            .filter(|(c, _)| c.arm == arm)
            .fold((0.0, 0.0), |(n, d), (c, wj)| (n + wj * c.y, d + wj));
        num / den
    };
    let psi1 = arm_mean(Arm::Intervention);
    let psi0 = arm_mean(Arm::Control);
    let mut ic1 = Vec::with_capacity(communities.len());
    let mut ic0 = Vec::with_capacity(communities.len());
    for (c, wj) in communities.iter().zip(&w) {
        let (a, b) = match c.arm {
            Arm::Intervention => (wj / 0.5 * (c.y - psi1), 0.0),
            Arm::Control => (0.0, wj / 0.5 * (c.y - psi0)),
        };
        ic1.push(a);
        ic0.push(b);
    }
    infer(
        communities,
        IcInput {
            estimator: "unadjusted",
            psi1,
            psi0,
            ic1: &ic1,
            ic0: &ic0,
            unit,
            df,
        },
    )
}

/// Ratio of arm means with influence-curve inference under pair matching.
pub fn unadjusted_effect(communities: &[CommunityRecord]) -> Result<EffectEstimate> {
    let pairs = validate_pairs(communities)?;
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two pairs"));
    }
    unadjusted_with_unit(communities, IcUnit::Pair, pairs.len() as u32 - 1)
}
