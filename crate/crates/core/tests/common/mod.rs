//! Independent oracles and fuzz generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pairtrial::stage1::{Cohort, CovariateValue, IndividualRecord, SuppressionClass, SuppressionRecord};
use pairtrial::stage2::{Adjustment, Arm, CommunityRecord, TmleFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Matching

/// Every perfect matching of `0..n`, by recursion on the lowest free index.
pub fn all_matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(free: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if free.is_empty() {
            out.push(cur.clone());
            return;
        }
        let first = free[0];
        for k in 1..free.len() {
            let rest: Vec<usize> = free[1..].iter().copied().filter(|&x| x != free[k]).collect();
            cur.push((first, free[k]));
            rec(&rest, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(&(0..n).collect::<Vec<_>>(), &mut Vec::new(), &mut out);
    out
}

/// Minimum total cost over all perfect matchings, with the set of pairs
/// attaining it.
pub fn brute_force_matching(cost: &[Vec<f64>]) -> (f64, BTreeSet<(usize, usize)>) {
    let mut best = (f64::INFINITY, BTreeSet::new());
    for m in all_matchings(cost.len()) {
        let total: f64 = m.iter().map(|&(i, j)| cost[i][j]).sum();
        if total < best.0 {
            best = (total, m.into_iter().collect());
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Unsuppressed person-time

/// Day-by-day status walk: for each day decide residency, infection and
/// suppression from the record, and count unsuppressed resident days.
pub fn person_days_oracle(r: &SuppressionRecord) -> (i64, i64) {
    let w = r.window_end;
    let suppressed_from_art = |d: i64| r.art_start_date.is_some_and(|a| d >= a + 182);
    let mut unsup = 0;
    let mut total = 0;
    for d in 0..w {
        let arrived = match r.classification {
            SuppressionClass::InmigrantPos => d >= r.inmigration_date.unwrap(),
            _ => true,
        };
        let gone = r.outmigration_date.is_some_and(|o| d >= o) || r.death_date.is_some_and(|x| d >= x);
        if !arrived || gone {
            continue;
        }
        total += 1;
        let (infected, suppressed) = match r.classification {
            SuppressionClass::Negative => (false, false),
            SuppressionClass::BaselinePos => {
                let s = match (r.suppressed_at_baseline.unwrap(), r.suppressed_at_y3) {
                    (true, true) => true,
                    (false, true) => suppressed_from_art(d),
                    (false, false) => false,
                    (true, false) => d < w / 2,
                };
                (true, s)
            }
            SuppressionClass::Incident => {
                if r.suppressed_at_y3 {
                    (d >= r.art_start_date.unwrap() / 2, suppressed_from_art(d))
                } else {
                    (d >= w / 2, false)
                }
            }
            SuppressionClass::InmigrantPos => (true, r.suppressed_at_y3 && suppressed_from_art(d)),
            SuppressionClass::MissingBaselinePos => (true, r.suppressed_at_y3),
        };
        if infected && !suppressed {
            unsup += 1;
        }
    }
    (unsup, total)
}

/// A random record satisfying the classification's field requirements.
pub fn fuzz_suppression_record(rng: &mut ChaCha8Rng, id: usize) -> SuppressionRecord {
    let w: i64 = rng.random_range(30..=1200);
    let class = match rng.random_range(0..5) {
        0 => SuppressionClass::BaselinePos,
        1 => SuppressionClass::Incident,
        2 => SuppressionClass::InmigrantPos,
        3 => SuppressionClass::MissingBaselinePos,
        _ => SuppressionClass::Negative,
    };
    let date = |rng: &mut ChaCha8Rng, p: f64| rng.random_bool(p).then(|| rng.random_range(0..=w));
    let suppressed_at_y3 = rng.random_bool(0.5);
    let suppressed_at_baseline = (class == SuppressionClass::BaselinePos).then(|| rng.random_bool(0.5));
    let art_start_date = if suppressed_at_y3 {
        Some(rng.random_range(0..=w))
    } else {
        date(rng, 0.2)
    };
    let inmigration_date = (class == SuppressionClass::InmigrantPos).then(|| rng.random_range(0..=w));
    SuppressionRecord {
        id: format!("r{id}"),
        classification: class,
        suppressed_at_baseline,
        suppressed_at_y3,
        art_start_date,
        inmigration_date,
        outmigration_date: date(rng, 0.3),
        death_date: date(rng, 0.1),
        window_end: w,
    }
}

// ---------------------------------------------------------------------------
// Kaplan-Meier

/// Discrete-time product limit on whole days: walk days 0..=max, count
/// those at risk (time ≥ day) and events on that day.
pub fn km_discrete_oracle(events: &[u32], censored: &[u32]) -> Vec<f64> {
    let max = events.iter().chain(censored).copied().max().unwrap_or(0);
    let mut s = 1.0;
    let mut out = Vec::with_capacity(max as usize + 1);
    for day in 0..=max {
        let at_risk = events.iter().chain(censored).filter(|&&t| t >= day).count();
        let d = events.iter().filter(|&&t| t == day).count();
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
        }
        out.push(s);
    }
    out
}

pub fn fuzz_survival_times(rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
    let n = rng.random_range(1..60);
    let horizon = rng.random_range(1..40);
    let mut events = Vec::new();
    let mut censored = Vec::new();
    for _ in 0..n {
        let t = rng.random_range(0..=horizon);
        if rng.random_bool(0.6) {
            events.push(t);
        } else {
            censored.push(t);
        }
    }
    (events, censored)
}

// ---------------------------------------------------------------------------
// Stage I

pub fn fuzz_cohort(rng: &mut ChaCha8Rng, n: usize) -> Cohort {
    let records = (0..n)
        .map(|i| {
            let x = rng.random_range(-1.0..1.0);
            let b = rng.random_bool(0.5) as u8 as f64;
            let censored = rng.random_bool(expit(-2.0 + x));
            let measured = !censored && rng.random_bool(expit(1.0 + 0.8 * x - 0.7 * b));
            let infected = rng.random_bool(expit(-2.5 + 0.6 * x + 0.5 * b));
            IndividualRecord::new(
                i as u64,
                vec![CovariateValue::Num(x), CovariateValue::Num(b)],
                censored,
                measured,
                measured.then_some(infected),
            )
        })
        .collect();
    Cohort {
        community_id: "c".into(),
        covariate_names: vec!["x".into(), "b".into()],
        records,
    }
}

/// Records with one binary covariate `w`: P(W=1)=p_w, P(measured | w) and
/// P(I=1 | w) as given. Returns the cohort and the population value
/// Σ_w P(W=w) E[I | W=w].
pub fn two_stratum_cohort(
    rng: &mut ChaCha8Rng,
    n: usize,
    p_w: f64,
    p_measured: [f64; 2],
    p_infected: [f64; 2],
) -> (Cohort, f64) {
    let records = (0..n)
        .map(|i| {
            let w = rng.random_bool(p_w) as usize;
            let measured = rng.random_bool(p_measured[w]);
            let infected = rng.random_bool(p_infected[w]);
            IndividualRecord::new(
                i as u64,
                vec![CovariateValue::Num(w as f64)],
                false,
                measured,
                measured.then_some(infected),
            )
        })
        .collect();
    let truth = (1.0 - p_w) * p_infected[0] + p_w * p_infected[1];
    let cohort = Cohort {
        community_id: "c".into(),
        covariate_names: vec!["w".into()],
        records,
    };
    (cohort, truth)
}

/// Plug-in stratified mean Σ_w P̂(W=w) Ê[I | W=w, observed].
pub fn stratified_plugin(cohort: &Cohort) -> f64 {
    let mut n = [0usize; 2];
    let mut obs = [0usize; 2];
    let mut cases = [0usize; 2];
    for r in &cohort.records {
        let w = match r.w[0] {
            CovariateValue::Num(x) => x as usize,
            _ => unreachable!(),
        };
        n[w] += 1;
        if r.observed() {
            obs[w] += 1;
            cases[w] += r.outcome.unwrap() as usize;
        }
    }
    let total = (n[0] + n[1]) as f64;
    (0..2)
        .map(|w| n[w] as f64 / total * cases[w] as f64 / obs[w] as f64)
        .sum()
}

// ---------------------------------------------------------------------------
// Stage II

pub struct FuzzOptions {
    pub pairs: usize,
    pub regions: usize,
    pub random_weights: bool,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        FuzzOptions {
            pairs: 16,
            regions: 3,
            random_weights: false,
        }
    }
}

/// Pair-randomized communities with two covariates and outcomes that depend
/// on them and on the arm.
pub fn fuzz_communities(rng: &mut ChaCha8Rng, opts: &FuzzOptions) -> Vec<CommunityRecord> {
    let beta_bp = rng.random_range(-4.0..8.0);
    let beta_mc = rng.random_range(-2.0..2.0);
    let effect = rng.random_range(-0.8..0.3);
    let base = rng.random_range(-5.0..-2.5);
    let mut out = Vec::with_capacity(2 * opts.pairs);
    for k in 0..opts.pairs {
        let region = format!("r{}", k % opts.regions);
        let bp_pair = rng.random_range(0.03..0.30);
        let first_treated = rng.random_bool(0.5);
        for member in 0..2 {
            let bp = (bp_pair + rng.random_range(-0.02..0.02f64)).max(0.005);
            let mc = rng.random_range(0.2..0.8);
            let arm = if (member == 0) == first_treated {
                Arm::Intervention
            } else {
                Arm::Control
            };
            let lin = base + beta_bp * bp + beta_mc * mc + effect * arm.indicator() + rng.random_range(-0.4..0.4);
            let mut covariates = BTreeMap::new();
            covariates.insert("baseline_prevalence".to_string(), bp);
            covariates.insert("mc_coverage".to_string(), mc);
            out.push(CommunityRecord {
                id: format!("c{:02}", 2 * k + member),
                region: region.clone(),
                pair_id: k as u32 + 1,
                covariates,
                arm,
                y: expit(lin),
                denominator: rng.random_range(800..3000),
                weight: if opts.random_weights {
                    rng.random_range(0.5..2.0)
                } else {
                    1.0
                },
            });
        }
    }
    out
}

pub fn region_levels(communities: &[CommunityRecord]) -> Vec<String> {
    communities
        .iter()
        .map(|c| c.region.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Efficient-score residuals Σ_j w̃_j I(A_j=a)/ĝ(a|E_j) (Y_j − Q*(a,E_j))
/// for a = 1, 0, with weights rescaled to mean one.
pub fn score_residuals(communities: &[CommunityRecord], fit: &TmleFit) -> [f64; 2] {
    let mean_w = communities.iter().map(|c| c.weight).sum::<f64>() / communities.len() as f64;
    let mut s = [0.0; 2];
    for c in communities {
        let w = c.weight / mean_w;
        let k = if c.arm == Arm::Intervention { 0 } else { 1 };
        s[k] += w / fit.g(c, c.arm).unwrap() * (c.y - fit.targeted(c, c.arm).unwrap());
    }
    s
}

pub const ADJUSTMENTS: [&str; 3] = ["none", "baseline_prevalence", "mc_coverage"];

pub fn adjustment(name: &str) -> Adjustment {
    match name {
        "none" => Adjustment::None,
        "region" => Adjustment::Region,
        other => Adjustment::covariate(other),
    }
}

/// Direct unadjusted pair-matched estimate: arm means, pair log-ratio
/// influence values and SE, for equal weights.
pub fn unadjusted_oracle(communities: &[CommunityRecord]) -> (f64, f64, Vec<f64>, f64) {
    let mean = |arm: Arm| {
        let ys: Vec<f64> = communities.iter().filter(|c| c.arm == arm).map(|c| c.y).collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    let (psi1, psi0) = (mean(Arm::Intervention), mean(Arm::Control));
    let mut by_pair: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    for c in communities {
        let e = by_pair.entry(c.pair_id).or_default();
        e[if c.arm == Arm::Intervention { 0 } else { 1 }] = c.y;
    }
    let ic: Vec<f64> = by_pair
        .values()
        .map(|[y1, y0]| (y1 - psi1) / psi1 - (y0 - psi0) / psi0)
        .collect();
    let k = ic.len() as f64;
    let m = ic.iter().sum::<f64>() / k;
    let var = ic.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    (psi1, psi0, ic, (var / k).sqrt())
}
