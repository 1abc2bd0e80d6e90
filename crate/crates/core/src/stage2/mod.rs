//! Stage II: compare community-level outcomes across arms.
//!
//! Both estimators are substitution estimators of the sample incidence
//! ratio `ψ(1)/ψ(0)` with `ψ(a)` the (weighted) mean over communities of
//! the outcome under arm `a`. Inference uses the estimated influence curve:
//! member-level curves are averaged within matched pairs, combined on the
//! log scale by the delta method, and referred to Student's t with
//! `pairs − 1` degrees of freedom.

mod adaptive;
mod tmle;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matchpairs::Matchable;
use crate::numkit::{sample_variance, t_cdf, t_quantile};

pub use adaptive::{
    adaptive_prespec, break_match_effect, drop_pair_sensitivity, CandidateLibrary, CvScore,
    Selection,
};
pub use tmle::{tmle_effect, unadjusted_effect, TmleFit, G_BOUNDS};

/// Covariate names used by the default adjustment library.
pub const BASELINE_PREVALENCE: &str = "baseline_prevalence";
pub const MC_COVERAGE: &str = "mc_coverage";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Intervention,
}

impl Arm {
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Intervention => 1.0,
        }
    }

    pub fn from_indicator(a: u8) -> Result<Self> {
        match a {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Intervention),
            other => Err(Error::invalid(format!("arm must be 0 or 1, got {other}"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Arm::Control => Arm::Intervention,
            Arm::Intervention => Arm::Control,
        }
    }
}

/// One community as the unit of the Stage II analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityRecord {
    pub id: String,
    pub region: String,
    pub pair_id: u32,
    /// Baseline covariates `E`.
    pub covariates: BTreeMap<String, f64>,
    pub arm: Arm,
    /// Stage I outcome.
    pub y: f64,
    /// Stage I denominator.
    pub denominator: u64,
    pub weight: f64,
}

impl Matchable for CommunityRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn region(&self) -> &str {
        &self.region
    }
    fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every community counts equally.
    Equal,
    /// Proportional to the Stage I denominator.
    Size,
}

impl std::str::FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Weighting::Equal),
            "size" => Ok(Weighting::Size),
            other => Err(Error::invalid(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Set `weight` on every community.
pub fn apply_weighting(communities: &mut [CommunityRecord], weighting: Weighting) {
    for c in communities {
        c.weight = match weighting {
            Weighting::Equal => 1.0,
            Weighting::Size => c.denominator as f64,
        };
    }
}

/// Independent unit for variance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcUnit {
    Pair,
    Community,
}

/// Adjustment variable for one of the two regressions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    None,
    Covariate(String),
    /// Indicators for every region but the first (in name order).
    Region,
}

impl Adjustment {
    pub fn covariate(name: &str) -> Self {
        Adjustment::Covariate(name.to_string())
    }

    pub fn label(&self) -> Option<String> {
        match self {
            Adjustment::None => None,
            Adjustment::Covariate(n) => Some(n.clone()),
            Adjustment::Region => Some("region".into()),
        }
    }
}

impl std::fmt::Display for Adjustment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label().as_deref().unwrap_or("none"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: String,
    pub psi1: f64,
    pub psi0: f64,
    pub ratio: f64,
    pub log_ratio: f64,
    pub log_se: f64,
    pub t_stat: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub df: u32,
    pub abs_difference: f64,
    pub abs_se: f64,
    pub abs_ci_lower: f64,
    pub abs_ci_upper: f64,
    pub selected_q_var: Option<String>,
    pub selected_g_var: Option<String>,
    pub ic_unit: IcUnit,
    /// Influence-curve values of the log ratio per unit (pairs in
    /// ascending pair id, or communities in input order).
    pub pair_ic: Vec<f64>,
    pub unit_ids: Vec<String>,
    pub dropped_pair: Option<u32>,
    pub selection: Option<Selection>,
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    pub fn rejects_null(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    pub fn covers(&self, ratio: f64) -> bool {
        self.ci_lower <= ratio && ratio <= self.ci_upper
    }
}

/// Check arm/pair structure and outcome ranges; returns pair ids in
/// ascending order with the member indices `(intervention, control)`.
pub fn validate_pairs(communities: &[CommunityRecord]) -> Result<Vec<(u32, [usize; 2])>> {
    validate_records(communities)?;
    let mut pairs: BTreeMap<u32, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for (j, c) in communities.iter().enumerate() {
        let slot = pairs.entry(c.pair_id).or_default();
        let target = match c.arm {
            Arm::Intervention => &mut slot.0,
            Arm::Control => &mut slot.1,
        };
        if target.replace(j).is_some() {
            return Err(Error::invalid(format!(
                "pair {} has more than one {:?} community",
                c.pair_id, c.arm
            )));
        }
    }
    pairs
        .into_iter()
        .map(|(k, slot)| match slot {
            (Some(i), Some(c)) => Ok((k, [i, c])),
            _ => Err(Error::invalid(format!("pair {k} lacks one arm"))),
        })
        .collect()
}

pub(crate) fn validate_records(communities: &[CommunityRecord]) -> Result<()> {
    for c in communities {
        if !(0.0..=1.0).contains(&c.y) {
            return Err(Error::invalid(format!("community '{}': outcome {} outside [0,1]", c.id, c.y)));
        }
        if !(c.weight > 0.0) || !c.weight.is_finite() {
            return Err(Error::invalid(format!("community '{}': weight must be positive", c.id)));
        }
    }
    Ok(())
}

/// Influence-curve based inference from per-community curves of `ψ(1)`
/// and `ψ(0)`.
pub(crate) struct IcInput<'a> {
    pub estimator: &'a str,
    pub psi1: f64,
    pub psi0: f64,
    pub ic1: &'a [f64],
    pub ic0: &'a [f64],
    pub unit: IcUnit,
    pub df: u32,
}

pub(crate) fn infer(
    communities: &[CommunityRecord],
    input: IcInput<'_>,
) -> Result<EffectEstimate> {
    let IcInput {
        estimator,
        psi1,
        psi0,
        ic1,
        ic0,
        unit,
        df,
    } = input;
    if !(psi0 > 0.0) {
        return Err(Error::RatioUndefined);
    }
    if !(psi1 > 0.0) {
        return Err(Error::invalid("intervention-arm estimate is zero; log ratio undefined"));
    }
    let (unit_ids, u1, u0): (Vec<String>, Vec<f64>, Vec<f64>) = match unit {
        IcUnit::Pair => {
            let pairs = validate_pairs(communities)?;
            let mut ids = Vec::with_capacity(pairs.len());
            let mut a = Vec::with_capacity(pairs.len());
            let mut b = Vec::with_capacity(pairs.len());
            for (k, [i, c]) in pairs {
                ids.push(k.to_string());
                a.push(0.5 * (ic1[i] + ic1[c]));
                b.push(0.5 * (ic0[i] + ic0[c]));
            }
            (ids, a, b)
        }
        IcUnit::Community => (
            communities.iter().map(|c| c.id.clone()).collect(),
            ic1.to_vec(),
            ic0.to_vec(),
        ),
    };
    let n_units = u1.len() as f64;
    let log_ic: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a / psi1 - b / psi0).collect();
    let abs_ic: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
    let log_se = (sample_variance(&log_ic) / n_units).sqrt();
    let abs_se = (sample_variance(&abs_ic) / n_units).sqrt();
    let ratio = psi1 / psi0;
    let log_ratio = ratio.ln();
    let q = t_quantile(0.975, df);
    let t_stat = if log_se > 0.0 {
        log_ratio / log_se
    } else if log_ratio == 0.0 {
        0.0
    } else {
        log_ratio.signum() * f64::INFINITY
    };
    let p_value = (2.0 * (1.0 - t_cdf(t_stat.abs(), df))).clamp(0.0, 1.0);
    let abs_difference = psi1 - psi0;
    Ok(EffectEstimate {
        estimator: estimator.to_string(),
        psi1,
        psi0,
        ratio,
        log_ratio,
        log_se,
        t_stat,
        ci_lower: (log_ratio - q * log_se).exp(),
        ci_upper: (log_ratio + q * log_se).exp(),
        p_value,
        df,
        abs_difference,
        abs_se,
        abs_ci_lower: abs_difference - q * abs_se,
        abs_ci_upper: abs_difference + q * abs_se,
        selected_q_var: None,
        selected_g_var: None,
        ic_unit: unit,
        pair_ic: log_ic,
        unit_ids,
        dropped_pair: None,
        selection: None,
        warnings: Vec::new(),
    })
}

/// Weights rescaled to mean one.
pub(crate) fn normalized_weights(communities: &[CommunityRecord]) -> Vec<f64> {
    let m = communities.iter().map(|c| c.weight).sum::<f64>() / communities.len() as f64;
    communities.iter().map(|c| c.weight / m).collect()
}
