//! Whole-trial pipeline (simulate, match, randomize, Stage I, Stage II)
//! and the Monte-Carlo harness that summarizes operating characteristics
//! over many simulated trials.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matchpairs::{optimal_pairs_within_region, Matchable, MatchedPairing};
use crate::numkit::{mix_seed, RngStream};
use crate::stage1::{cumulative_incidence_empirical, cumulative_incidence_tmle, Cohort};
use crate::stage2::{
    adaptive_prespec, apply_weighting, break_match_effect, drop_pair_sensitivity, tmle_effect,
    unadjusted_effect, Adjustment, Arm, CandidateLibrary, CommunityRecord, EffectEstimate,
    Weighting, BASELINE_PREVALENCE, MC_COVERAGE,
};
use crate::trialsim::{incidence_cohort, km_pair_cv, sample_truth, simulate_population, ScenarioConfig, SimCommunity};

const STREAM_RANDOMIZE: u64 = 3;

/// Variables used to form pairs in simulated trials.
pub const DEFAULT_MATCH_VARS: [&str; 2] = ["e4", "e7"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Unadjusted,
    /// Adaptive pre-specification over the candidate library.
    Adaptive,
    /// Targeted estimator with fixed adjustment.
    Fixed { q: Adjustment, g: Adjustment },
    DropPair(String),
    BreakMatch,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Unadjusted => f.write_str("unadjusted"),
            Estimator::Adaptive => f.write_str("adaptive"),
            Estimator::Fixed { q, g } => write!(f, "tmle:{q}:{g}"),
            Estimator::DropPair(v) => write!(f, "drop-pair:{v}"),
            Estimator::BreakMatch => f.write_str("break-match"),
        }
    }
}

fn parse_adjustment(s: &str) -> Adjustment {
    match s {
        "none" | "" => Adjustment::None,
        "region" => Adjustment::Region,
        other => Adjustment::covariate(other),
    }
}

impl FromStr for Estimator {
    type Err = Error;

    /// `unadjusted`, `adaptive`, `break-match`, `drop-pair[:VAR]` or
    /// `tmle:Q:G` with `none` for no adjustment.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(2, ':');
        let head = parts.next().unwrap_or("");
        let rest = parts.next();
        match (head, rest) {
            ("unadjusted", None) => Ok(Estimator::Unadjusted),
            ("adaptive", None) => Ok(Estimator::Adaptive),
            ("break-match", None) => Ok(Estimator::BreakMatch),
            ("drop-pair", None) => Ok(Estimator::DropPair(BASELINE_PREVALENCE.into())),
            ("drop-pair", Some(v)) if !v.is_empty() => Ok(Estimator::DropPair(v.into())),
            ("tmle", Some(qg)) => {
                let (q, g) = qg.split_once(':').unwrap_or((qg, "none"));
                Ok(Estimator::Fixed {
                    q: parse_adjustment(q),
                    g: parse_adjustment(g),
                })
            }
            _ => Err(Error::invalid(format!(
                "unknown estimator '{s}' (expected unadjusted, adaptive, tmle:Q:G, drop-pair[:VAR] or break-match)"
            ))),
        }
    }
}

impl Estimator {
    pub fn run(&self, communities: &[CommunityRecord], library: &CandidateLibrary) -> Result<EffectEstimate> {
        match self {
            Estimator::Unadjusted => unadjusted_effect(communities),
            Estimator::Adaptive => adaptive_prespec(communities, library),
            Estimator::Fixed { q, g } => tmle_effect(communities, q, g),
            Estimator::DropPair(var) => drop_pair_sensitivity(communities, var, library),
            Estimator::BreakMatch => break_match_effect(communities, library),
        }
    }
}

/// How the community-level outcome is computed from its cohort.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Stage1Method {
    #[default]
    Empirical,
    /// Targeted estimate adjusting for the named cohort covariates.
    Targeted(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub stage1: Stage1Method,
    pub weighting: Weighting,
    pub library: CandidateLibrary,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            stage1: Stage1Method::Empirical,
            weighting: Weighting::Equal,
            library: CandidateLibrary::default(),
        }
    }
}

/// Community outcome and its denominator (measured, uncensored members).
pub fn stage1_outcome(cohort: &Cohort, method: &Stage1Method) -> Result<(f64, u64)> {
    let (empirical, denominator) = cumulative_incidence_empirical(&cohort.records)?;
    let y = match method {
        Stage1Method::Empirical => empirical,
        Stage1Method::Targeted(vars) => {
            let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
            cumulative_incidence_tmle(cohort, &vars)?.estimate
        }
    };
    Ok((y, denominator as u64))
}

/// Replace each community's outcome by the Stage I estimate from its
/// cohort. Every community must have a cohort.
pub fn apply_stage1(communities: &mut [CommunityRecord], cohorts: &[Cohort], method: &Stage1Method) -> Result<()> {
    let by_id: BTreeMap<&str, &Cohort> = cohorts.iter().map(|c| (c.community_id.as_str(), c)).collect();
    for c in communities.iter_mut() {
        let cohort = by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no individual records for community '{}'", c.id)))?;
        let (y, d) = stage1_outcome(cohort, method)?;
        c.y = y;
        c.denominator = d;
    }
    Ok(())
}

/// Stage I (when cohorts are given), weighting, then the Stage II estimator.
pub fn analyze(
    mut communities: Vec<CommunityRecord>,
    cohorts: Option<&[Cohort]>,
    estimator: &Estimator,
    opts: &AnalysisOptions,
) -> Result<EffectEstimate> {
    if let Some(cohorts) = cohorts {
        apply_stage1(&mut communities, cohorts, &opts.stage1)?;
    }
    apply_weighting(&mut communities, opts.weighting);
    estimator.run(&communities, &opts.library)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub scenario: String,
    pub seed: u64,
    pub psi1: f64,
    pub psi0: f64,
    pub ratio: f64,
    pub km: f64,
    /// Community id → [control, intervention] true cumulative incidence.
    pub per_community: BTreeMap<String, [f64; 2]>,
}

/// One simulated trial as it would be observed, plus its truth.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub pairing: MatchedPairing,
    /// Stage I outcomes filled in, weights 1.
    pub communities: Vec<CommunityRecord>,
    pub cohorts: Vec<Cohort>,
    pub truth: TrialTruth,
}

/// Pair within region, then flip a fair coin per pair. Pair ids follow the
/// pairing order, starting at 1.
pub fn randomize(pairing: &MatchedPairing, seed: u64) -> BTreeMap<String, (u32, Arm)> {
    let rng = RngStream::new(seed, &[STREAM_RANDOMIZE]);
    let mut out = BTreeMap::new();
    for (k, (a, b)) in pairing.pairs.iter().enumerate() {
        let first_treated = rng.child(k as u64).bernoulli(0.5);
        let (arm_a, arm_b) = if first_treated {
            (Arm::Intervention, Arm::Control)
        } else {
            (Arm::Control, Arm::Intervention)
        };
        out.insert(a.clone(), (k as u32 + 1, arm_a));
        out.insert(b.clone(), (k as u32 + 1, arm_b));
    }
    out
}

fn community_covariates(c: &SimCommunity) -> BTreeMap<String, f64> {
    let mut m: BTreeMap<String, f64> = (1..=9).map(|k| (format!("e{k}"), c.e[k - 1])).collect();
    m.insert(BASELINE_PREVALENCE.into(), c.baseline_prevalence);
    m.insert(MC_COVERAGE.into(), c.mc_coverage);
    m
}

/// Build the observed trial from a simulated population.
pub fn observe_trial(
    config: &ScenarioConfig,
    seed: u64,
    population: &[SimCommunity],
    match_vars: &[&str],
) -> Result<SimulatedTrial> {
    let pairing = optimal_pairs_within_region(population, match_vars)?;
    let assignment = randomize(&pairing, seed);
    let truth = sample_truth(population)?;
    let control: BTreeMap<String, f64> = truth.per_community.iter().map(|(k, v)| (k.clone(), v[0])).collect();
    let km = km_pair_cv(&pairing, &control)?;

    let mut communities = Vec::with_capacity(population.len());
    let mut cohorts = Vec::with_capacity(population.len());
    for c in population {
        let (pair_id, arm) = assignment[c.id()];
        let cohort = incidence_cohort(c, arm);
        let (y, denominator) = stage1_outcome(&cohort, &Stage1Method::Empirical)?;
        communities.push(CommunityRecord {
            id: c.id.clone(),
            region: c.region.clone(),
            pair_id,
            covariates: community_covariates(c),
            arm,
            y,
            denominator,
            weight: 1.0,
        });
        cohorts.push(cohort);
    }
    Ok(SimulatedTrial {
        pairing,
        communities,
        cohorts,
        truth: TrialTruth {
            scenario: config.name.clone(),
            seed,
            psi1: truth.psi1,
            psi0: truth.psi0,
            ratio: truth.ratio,
            km,
            per_community: truth.per_community,
        },
    })
}

/// Simulate a population from `seed` and observe it as a trial.
pub fn simulate_trial(config: &ScenarioConfig, seed: u64) -> Result<SimulatedTrial> {
    let population = simulate_population(config, seed)?;
    observe_trial(config, seed, &population, &DEFAULT_MATCH_VARS)
}

/// Summary of one estimator over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub replicates: usize,
    pub failures: usize,
    /// Mean of estimated ratio minus the replicate's true ratio.
    pub bias: f64,
    /// Same on the log scale.
    pub log_bias: f64,
    /// Mean standard error of the log ratio.
    pub mean_se: f64,
    /// Monte-Carlo standard deviation of the estimated log ratio.
    pub sd_log_ratio: f64,
    pub mean_t: f64,
    /// Share of confidence intervals containing the replicate's true ratio.
    pub coverage: f64,
    /// Share of replicates rejecting a ratio of 1 at level `alpha`; power
    /// or type-I error depending on the scenario.
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub estimator: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub scenario: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub alpha: f64,
    pub size_scale: f64,
    pub note: Option<String>,
    pub mean_true_ratio: f64,
    pub var_true_ratio: f64,
    pub mean_km: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub failures: Vec<ReplicateFailure>,
}

/// Everything kept from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub true_ratio: f64,
    pub km: f64,
    pub estimates: Vec<std::result::Result<EffectEstimate, String>>,
}

/// Seed of replicate `index`.
pub fn replicate_seed(master_seed: u64, index: usize) -> u64 {
    mix_seed(master_seed, index as u64)
}

pub fn run_replicate(
    config: &ScenarioConfig,
    master_seed: u64,
    index: usize,
    estimators: &[Estimator],
    opts: &AnalysisOptions,
) -> Result<ReplicateOutcome> {
    let seed = replicate_seed(master_seed, index);
    let trial = simulate_trial(config, seed)?;
    let estimates = estimators
        .iter()
        .map(|e| analyze(trial.communities.clone(), None, e, opts).map_err(|err| err.to_string()))
        .collect();
    Ok(ReplicateOutcome {
        replicate: index,
        seed,
        true_ratio: trial.truth.ratio,
        km: trial.truth.km,
        estimates,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Aggregate per-replicate results, in replicate order.
pub fn summarize(
    config: &ScenarioConfig,
    master_seed: u64,
    estimators: &[Estimator],
    alpha: f64,
    results: &[std::result::Result<ReplicateOutcome, (usize, String)>],
) -> ReplicateReport {
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err((replicate, message)) => failures.push(ReplicateFailure {
                replicate: *replicate,
                estimator: None,
                message: message.clone(),
            }),
        }
    }
    let mut summaries = Vec::with_capacity(estimators.len());
    for (k, est) in estimators.iter().enumerate() {
        let mut rows = Vec::new();
        for o in &ok {
            match &o.estimates[k] {
                Ok(e) => rows.push((e, o.true_ratio)),
                Err(message) => failures.push(ReplicateFailure {
                    replicate: o.replicate,
                    estimator: Some(est.to_string()),
                    message: message.clone(),
                }),
            }
        }
        let n = rows.len();
        let share = |f: &dyn Fn(&EffectEstimate, f64) -> bool| {
            if n == 0 {
                f64::NAN
            } else {
                rows.iter().filter(|(e, t)| f(e, *t)).count() as f64 / n as f64
            }
        };
        summaries.push(EstimatorSummary {
            estimator: est.to_string(),
            replicates: n,
            failures: results.len() - n,
            bias: mean(rows.iter().map(|(e, t)| e.ratio - t)),
            log_bias: mean(rows.iter().map(|(e, t)| e.log_ratio - t.ln())),
            mean_se: mean(rows.iter().map(|(e, _)| e.log_se)),
            sd_log_ratio: crate::numkit::sample_variance(&rows.iter().map(|(e, _)| e.log_ratio).collect::<Vec<_>>()).sqrt(),
            mean_t: mean(rows.iter().map(|(e, _)| e.t_stat)),
            coverage: share(&|e, t| e.covers(t)),
            rejection_rate: share(&|e, _| e.rejects_null(alpha)),
        });
    }
    failures.sort_by_key(|f| f.replicate);
    let truths: Vec<f64> = ok.iter().map(|o| o.true_ratio).collect();
    let mean_true_ratio = mean(truths.iter().copied());
    let var_true_ratio = crate::numkit::sample_variance(&truths);
    ReplicateReport {
        scenario: config.name.clone(),
        master_seed,
        replicates: results.len(),
        alpha,
        size_scale: config.size_scale,
        note: (config.size_scale != 1.0)
            .then(|| format!("community sizes scaled by {}", config.size_scale)),
        mean_true_ratio,
        var_true_ratio,
        mean_km: mean(ok.iter().map(|o| o.km)),
        estimators: summaries,
        failures,
    }
}

/// Run `n_reps` replicates in parallel. The report depends only on the
/// inputs, never on the number of threads.
pub fn run_replicates(
    config: &ScenarioConfig,
    master_seed: u64,
    n_reps: usize,
    estimators: &[Estimator],
    opts: &AnalysisOptions,
    alpha: f64,
) -> Result<ReplicateReport> {
    if n_reps == 0 {
        return Err(Error::invalid("at least one replicate is required"));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    config.validate()?;
    let results: Vec<_> = (0..n_reps)
        .into_par_iter()
        .map(|i| run_replicate(config, master_seed, i, estimators, opts).map_err(|e| (i, e.to_string())))
        .collect();
    Ok(summarize(config, master_seed, estimators, alpha, &results))
}

/// The pair of estimators compared in the operating-characteristics table.
pub fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Unadjusted, Estimator::Adaptive]
}
