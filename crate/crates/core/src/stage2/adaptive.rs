//! Data-adaptive choice of the adjustment variables by cross-validated
//! influence-curve variance, plus the pre-specified sensitivity analyses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tmle::{region_levels, tmle_with_unit, TmleFit};
use super::{
    normalized_weights, validate_pairs, validate_records, Adjustment, Arm, CommunityRecord,
    EffectEstimate, IcUnit, BASELINE_PREVALENCE, MC_COVERAGE,
};
use crate::error::{Error, Result};
use crate::numkit::sample_variance;

/// Candidate adjustment covariates, in tie-break order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLibrary {
    pub covariates: Vec<String>,
}

impl Default for CandidateLibrary {
    fn default() -> Self {
        CandidateLibrary {
            covariates: vec![BASELINE_PREVALENCE.into(), MC_COVERAGE.into()],
        }
    }
}

impl CandidateLibrary {
    pub fn empty() -> Self {
        CandidateLibrary { covariates: Vec::new() }
    }

    fn adjustments(&self, with_region: bool) -> Vec<Adjustment> {
        let mut v = vec![Adjustment::None];
        v.extend(self.covariates.iter().map(|c| Adjustment::covariate(c)));
        if with_region {
            v.push(Adjustment::Region);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub q: Adjustment,
    pub g: Adjustment,
    /// `None` when the candidate could not be fit in some fold.
    pub cv_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub q: Adjustment,
    pub g: Adjustment,
    pub q_scores: Vec<CvScore>,
    pub g_scores: Vec<CvScore>,
}

/// Sample variance of held-out log-ratio influence-curve values, one per
/// fold, each computed from fits trained on the remaining units.
fn cv_variance(
    communities: &[CommunityRecord],
    folds: &[Vec<usize>],
    q: &Adjustment,
    g: &Adjustment,
    levels: &[String],
) -> Result<f64> {
    let w = normalized_weights(communities);
    let values = folds
        .par_iter()
        .map(|fold| {
            let train: Vec<CommunityRecord> = communities
                .iter()
                .enumerate()
                .filter(|(j, _)| !fold.contains(j))
                .map(|(_, c)| c.clone())
                .collect();
            let fit = TmleFit::fit(&train, q, g, levels)?;
            if !(fit.psi1 > 0.0 && fit.psi0 > 0.0) {
                return Err(Error::RatioUndefined);
            }
            let k = fold.len() as f64;
            let mut u1 = 0.0;
            let mut u0 = 0.0;
            for &j in fold {
                u1 += fit.ic(&communities[j], Arm::Intervention, w[j])?;
                u0 += fit.ic(&communities[j], Arm::Control, w[j])?;
            }
            Ok((u1 / k) / fit.psi1 - (u0 / k) / fit.psi0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let v = sample_variance(&values);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid("non-finite cross-validated variance"))
    }
}

fn score(
    communities: &[CommunityRecord],
    folds: &[Vec<usize>],
    q: &Adjustment,
    g: &Adjustment,
    levels: &[String],
) -> CvScore {
    CvScore {
        q: q.clone(),
        g: g.clone(),
        cv_variance: cv_variance(communities, folds, q, g, levels).ok(),
    }
}

/// First candidate with the smallest variance; earlier candidates win ties.
fn argmin(scores: &[CvScore]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = s.cv_variance {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn select(
    communities: &[CommunityRecord],
    folds: &[Vec<usize>],
    candidates: &[Adjustment],
    levels: &[String],
) -> Result<Selection> {
    let q_scores: Vec<CvScore> = candidates
        .iter()
        .map(|q| score(communities, folds, q, &Adjustment::None, levels))
        .collect();
    let best_q = argmin(&q_scores)
        .ok_or_else(|| Error::invalid("no candidate estimator could be fit"))?;
    let q = q_scores[best_q].q.clone();
    if q == Adjustment::None {
        return Ok(Selection {
            q,
            g: Adjustment::None,
            q_scores,
            g_scores: Vec::new(),
        });
    }
    let mut g_scores = vec![q_scores[best_q].clone()];
    for g in candidates.iter().filter(|g| **g != Adjustment::None && **g != q) {
        g_scores.push(score(communities, folds, &q, g, levels));
    }
    let best_g = argmin(&g_scores).expect("the unadjusted exposure candidate was scored");
    Ok(Selection {
        g: g_scores[best_g].g.clone(),
        q,
        q_scores,
        g_scores,
    })
}

/// Primary analysis: pick the outcome-regression covariate, then the
/// exposure covariate, by leave-one-pair-out cross-validated variance, and
/// return the targeted estimate for the selected pair.
pub fn adaptive_prespec(
    communities: &[CommunityRecord],
    library: &CandidateLibrary,
) -> Result<EffectEstimate> {
    let pairs = validate_pairs(communities)?;
    if pairs.len() < 2 {
        return Err(Error::invalid("adaptive selection needs at least two pairs"));
    }
    let folds: Vec<Vec<usize>> = pairs.iter().map(|(_, m)| m.to_vec()).collect();
    let levels = region_levels(communities);
    let selection = select(communities, &folds, &library.adjustments(false), &levels)?;
    let mut est = tmle_with_unit(
        communities,
        &selection.q,
        &selection.g,
        IcUnit::Pair,
        pairs.len() as u32 - 1,
    )?;
    est.estimator = "adaptive_tmle".into();
    est.selection = Some(selection);
    Ok(est)
}

/// Drop the pair with the largest within-pair discrepancy in `var` and
/// rerun [`adaptive_prespec`] on the remaining pairs.
pub fn drop_pair_sensitivity(
    communities: &[CommunityRecord],
    var: &str,
    library: &CandidateLibrary,
) -> Result<EffectEstimate> {
    let pairs = validate_pairs(communities)?;
    if pairs.len() < 3 {
        return Err(Error::invalid("dropping a pair needs at least three pairs"));
    }
    let value = |j: usize| {
        communities[j].covariates.get(var).copied().ok_or_else(|| {
            Error::invalid(format!("community '{}' lacks '{var}'", communities[j].id))
        })
    };
    let mut worst: Option<(u32, f64)> = None;
    let mut tied = false;
    for (k, [i, c]) in &pairs {
        let d = (value(*i)? - value(*c)?).abs();
        match worst {
            Some((_, w)) if d < w => {}
            Some((_, w)) if d == w => tied = true,
            _ => {
                worst = Some((*k, d));
                tied = false;
            }
        }
    }
    let (dropped, _) = worst.expect("at least three pairs");
    let kept: Vec<CommunityRecord> = communities
        .iter()
        .filter(|c| c.pair_id != dropped)
        .cloned()
        .collect();
    let mut est = adaptive_prespec(&kept, library)?;
    est.estimator = format!("drop_pair:{var}");
    est.dropped_pair = Some(dropped);
    if tied {
        est.warnings.push(format!(
            "several pairs share the largest discrepancy in '{var}'; dropped pair {dropped}"
        ));
    }
    Ok(est)
}

/// Ignore the matching: communities are the independent units, region
/// joins the candidate covariates, and selection uses leave-one-community-out
/// cross-validation. Degrees of freedom are `J − 2`.
pub fn break_match_effect(
    communities: &[CommunityRecord],
    library: &CandidateLibrary,
) -> Result<EffectEstimate> {
    validate_records(communities)?;
    let n1 = communities.iter().filter(|c| c.arm == Arm::Intervention).count();
    let n0 = communities.len() - n1;
    if n1 < 3 || n0 < 3 {
        return Err(Error::invalid("breaking the match needs at least three communities per arm"));
    }
    let levels = region_levels(communities);
    let folds: Vec<Vec<usize>> = (0..communities.len()).map(|j| vec![j]).collect();
    let selection = select(
        communities,
        &folds,
        &library.adjustments(levels.len() > 1),
        &levels,
    )?;
    let mut est = tmle_with_unit(
        communities,
        &selection.q,
        &selection.g,
        IcUnit::Community,
        communities.len() as u32 - 2,
    )?;
    est.estimator = "break_match".into();
    est.selection = Some(selection);
    Ok(est)
}
