//! Synthetic pair-matched trials: community covariates, counterfactual
//! infection histories under both arms on shared noise, and the censoring
//! and measurement processes that hide part of them.
//!
//! Random streams are keyed by position, so a community or an individual
//! draws the same values however the work is scheduled:
//! `[1, c]` for community `c`, `[2, c, i]` for individual `i` of community `c`.

mod config;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::*;

use crate::error::{Error, Result};
use crate::matchpairs::{Matchable, MatchedPairing};
use crate::numkit::{expit, logit, normal_cdf, Matrix, MvnSampler, RngStream};
use crate::stage1::{Cohort, CovariateValue, IndividualRecord};
use crate::stage2::Arm;

pub const AGE_GROUPS: [&str; 3] = ["15-24", "25-34", "35+"];
/// Covariates carried by every incidence cohort record, in order.
pub const COHORT_COVARIATES: [&str; 3] = ["age_group", "sex", "circumcised"];

const STREAM_COMMUNITY: u64 = 1;
const STREAM_INDIVIDUAL: u64 = 2;

/// Observed history of one individual under one arm, indexed by year 0..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmHistory {
    pub y: [bool; 4],
    pub c: [bool; 4],
    pub delta: [bool; 4],
}

/// Persistent latent components of the infection, censoring and
/// measurement noise processes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseState {
    pub y: f64,
    pub c: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIndividual {
    pub id: u64,
    /// Index into [`AGE_GROUPS`].
    pub age_group: u8,
    pub female: bool,
    /// Always false for women.
    pub circumcised: bool,
    /// Control history first, intervention second.
    pub histories: [ArmHistory; 2],
    pub noise: NoiseState,
}

impl SimIndividual {
    pub fn history(&self, arm: Arm) -> &ArmHistory {
        &self.histories[arm.indicator() as usize]
    }

    /// HIV-negative and tested at baseline.
    pub fn in_cohort(&self) -> bool {
        let h = &self.histories[0];
        !h.y[0] && h.delta[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCommunity {
    pub index: usize,
    pub id: String,
    pub region: String,
    pub country: String,
    pub e: [f64; 9],
    /// Target baseline prevalence.
    pub z: f64,
    /// Target male circumcision coverage.
    pub z2: f64,
    pub n: usize,
    pub baseline_coverage: f64,
    /// Annual hazards, control row first.
    pub hazard: [[f64; 3]; 2],
    pub censoring: CensoringScenario,
    pub measurement: MeasurementScenario,
    /// Prevalence among those tested at baseline (NaN before individuals exist).
    pub baseline_prevalence: f64,
    /// Circumcised share of men (NaN before individuals exist).
    pub mc_coverage: f64,
    pub individuals: Vec<SimIndividual>,
}

impl Matchable for SimCommunity {
    fn id(&self) -> &str {
        &self.id
    }

    fn region(&self) -> &str {
        &self.region
    }

    fn covariate(&self, name: &str) -> Option<f64> {
        match name {
            crate::stage2::BASELINE_PREVALENCE => Some(self.baseline_prevalence),
            crate::stage2::MC_COVERAGE => Some(self.mc_coverage),
            _ => {
                let k: usize = name.strip_prefix('e')?.parse().ok()?;
                (1..=9).contains(&k).then(|| self.e[k - 1])
            }
        }
    }
}

impl SimCommunity {
    /// Cumulative incidence by year 3 under `arm` among cohort members,
    /// with nobody censored or unmeasured.
    pub fn true_incidence(&self, arm: Arm) -> Result<f64> {
        let mut n = 0usize;
        let mut k = 0usize;
        for ind in self.individuals.iter().filter(|i| i.in_cohort()) {
            n += 1;
            k += ind.history(arm).y[3] as usize;
        }
        if n == 0 {
            return Err(Error::invalid(format!("community '{}' has an empty cohort", self.id)));
        }
        Ok(k as f64 / n as f64)
    }

    pub fn cohort_size(&self) -> usize {
        self.individuals.iter().filter(|i| i.in_cohort()).count()
    }
}

fn block_covariance(rho: &[f64; 3]) -> Matrix {
    let mut m = Matrix::identity(9);
    for b in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    m[(3 * b + i, 3 * b + j)] = rho[b];
                }
            }
        }
    }
    m
}

fn pick<T: Copy>(u: f64, options: &[T]) -> T {
    options[((u * options.len() as f64) as usize).min(options.len() - 1)]
}

/// Community-level draws: covariates, prevalence and circumcision targets,
/// size, coverage and hazards. Individuals are left empty.
pub fn gen_communities(config: &ScenarioConfig, rng: &RngStream) -> Result<Vec<SimCommunity>> {
    config.validate()?;
    let mvn = MvnSampler::new(&[0.0; 9], &block_covariance(&config.covariates.block_correlation))?;
    let hz = &config.hazard;
    let mut out = Vec::with_capacity(config.total_communities());
    let mut index = 0usize;
    for region in &config.regions {
        let country = &config.countries[&region.country];
        for _ in 0..region.communities {
            let mut r = rng.child(STREAM_COMMUNITY).child(index as u64);
            let ev = mvn.sample(&mut r);
            let mut e = [0.0; 9];
            e.copy_from_slice(&ev);
            let u_z = r.normal();
            let u_z2 = r.normal();
            let u_size = r.uniform();
            let u_cov = r.uniform();
            let eta = r.normal();
            let nu = [r.normal(), r.normal(), r.normal()];
            let u_cens = r.uniform();
            let u_meas = r.uniform();

            let pm = &config.prevalence;
            let lz = logit(region.prevalence)?
                + pm.coef_e1 * e[0]
                + pm.coef_e4 * e[3]
                + pm.coef_e7 * e[6]
                + pm.noise_sd * u_z;
            let z = expit(lz);
            let cm = &config.circumcision;
            let z2 = expit(logit(region.mc_coverage)? + cm.coef_e3 * e[2] + cm.noise_sd * u_z2);

            let lo = country.size_min as f64 * config.size_scale;
            let hi = country.size_max as f64 * config.size_scale;
            let n = (lo + (hi - lo) * u_size).round().max(1.0) as usize;
            let (clo, chi) = config.baseline_coverage;
            let baseline_coverage = clo + (chi - clo) * u_cov;

            let linear = hz.coef_e2 * e[1]
                + hz.coef_e5 * e[4]
                + hz.coef_e8 * e[7]
                + hz.coef_prevalence * (lz - logit(region.prevalence)?)
                + hz.coef_mc * (z2 - region.mc_coverage);
            let rho = hz.noise_correlation;
            let mut hazard = [[0.0; 3]; 2];
            for t in 0..3 {
                let eps = hz.noise_sd * (rho.sqrt() * eta + (1.0 - rho).sqrt() * nu[t]);
                let mult = (linear + eps).exp();
                let control = country.incidence.control[t];
                let intervention = if config.effect_null {
                    control
                } else {
                    country.incidence.intervention[t]
                };
                hazard[0][t] = control * mult;
                hazard[1][t] = intervention * mult;
            }

            use CensoringScenario as Cs;
            use MeasurementScenario as Ms;
            let censoring = match config.censoring.scenario {
                Cs::Mixture => pick(u_cens, &[Cs::None, Cs::Nondifferential, Cs::Differential]),
                s => s,
            };
            let measurement = match config.measurement.scenario {
                Ms::Mixture => pick(
                    u_meas,
                    &[Ms::Noninformative, Ms::InformativeTrueStatus, Ms::InformativeKnownStatus],
                ),
                s => s,
            };

            out.push(SimCommunity {
                index,
                id: format!("c{:02}", index + 1),
                region: region.name.clone(),
                country: region.country.clone(),
                e,
                z,
                z2,
                n,
                baseline_coverage,
                hazard,
                censoring,
                measurement,
                baseline_prevalence: f64::NAN,
                mc_coverage: f64::NAN,
                individuals: Vec::new(),
            });
            index += 1;
        }
    }
    Ok(out)
}

/// Mean of the individual relative risks, so community-level quantities
/// stay population averages.
fn mean_rr(ind: &IndividualModel, age_rr: &[f64; 3], female_rr: f64, circ: Option<(f64, f64)>) -> f64 {
    let age: f64 = ind.age_probs.iter().zip(age_rr).map(|(p, r)| p * r).sum();
    let male = match circ {
        Some((coverage, rr)) => 1.0 - coverage + coverage * rr,
        None => 1.0,
    };
    age * (ind.female_prob * female_rr + (1.0 - ind.female_prob) * male)
}

/// Populate `community.individuals` and the measured community covariates.
pub fn gen_individuals(community: &mut SimCommunity, config: &ScenarioConfig, rng: &RngStream) {
    let ind_model = &config.individual;
    let w = ind_model.persistence;
    let (sw, se) = (w.sqrt(), (1.0 - w).sqrt());
    let prev_norm = mean_rr(ind_model, &ind_model.prevalence_rr_age, ind_model.prevalence_rr_female, None);
    let hz_norm = mean_rr(
        ind_model,
        &ind_model.hazard_rr_age,
        ind_model.hazard_rr_female,
        Some((community.z2, ind_model.hazard_rr_circumcised)),
    );
    let cens_rates = match community.censoring {
        CensoringScenario::None => ArmStatusRates::uniform(0.0),
        CensoringScenario::Differential => config.censoring.differential,
        _ => config.censoring.nondifferential,
    };
    let meas_rates = match community.measurement {
        MeasurementScenario::Noninformative => config.measurement.noninformative,
        _ => config.measurement.informative,
    };
    let known_status = community.measurement == MeasurementScenario::InformativeKnownStatus;
    let base = rng.child(STREAM_INDIVIDUAL).child(community.index as u64);

    let mut individuals = Vec::with_capacity(community.n);
    for i in 0..community.n {
        let mut r = base.child(i as u64);
        let u_age = r.uniform();
        let u_sex = r.uniform();
        let u_circ = r.uniform();
        let u_y0 = r.uniform();
        let u_d0 = r.uniform();
        let noise = NoiseState {
            y: r.normal(),
            c: r.normal(),
            delta: r.normal(),
        };
        let mut innov = [[0.0; 3]; 3];
        for year in innov.iter_mut() {
            for v in year.iter_mut() {
                *v = r.normal();
            }
        }

        let age_group = if u_age < ind_model.age_probs[0] {
            0
        } else if u_age < ind_model.age_probs[0] + ind_model.age_probs[1] {
            1
        } else {
            2
        };
        let female = u_sex < ind_model.female_prob;
        let circumcised = !female && u_circ < community.z2;
        let mut prev_rr = ind_model.prevalence_rr_age[age_group];
        let mut hz_rr = ind_model.hazard_rr_age[age_group];
        if female {
            prev_rr *= ind_model.prevalence_rr_female;
            hz_rr *= ind_model.hazard_rr_female;
        } else if circumcised {
            hz_rr *= ind_model.hazard_rr_circumcised;
        }
        let y0 = u_y0 < (community.z * prev_rr / prev_norm).min(1.0);
        let d0 = u_d0 < community.baseline_coverage;
        let hz_rr = hz_rr / hz_norm;

        let mut histories = [ArmHistory::default(); 2];
        for (a, h) in histories.iter_mut().enumerate() {
            let intervention = a == 1;
            h.y[0] = y0;
            h.delta[0] = d0;
            let mut known = y0 && d0;
            for t in 1..=3 {
                let [ey, ec, ed] = innov[t - 1];
                let uy = normal_cdf(sw * noise.y + se * ey);
                let uc = normal_cdf(sw * noise.c + se * ec);
                let ud = normal_cdf(sw * noise.delta + se * ed);
                let p_inf = 1.0 - (-community.hazard[a][t - 1] * hz_rr).exp();
                h.y[t] = h.y[t - 1] || uy < p_inf;
                h.c[t] = h.c[t - 1] || uc < cens_rates.get(intervention, h.y[t]);
                let contact = intervention || t == 3;
                let status = if known_status { known } else { h.y[t] };
                h.delta[t] = contact && !h.c[t] && ud < meas_rates.get(intervention, status);
                known |= h.delta[t] && h.y[t];
            }
        }
        individuals.push(SimIndividual {
            id: i as u64 + 1,
            age_group: age_group as u8,
            female,
            circumcised,
            histories,
            noise,
        });
    }

    let tested = individuals.iter().filter(|i| i.histories[0].delta[0]);
    let (n_tested, n_pos) = tested.fold((0usize, 0usize), |(n, k), i| (n + 1, k + i.histories[0].y[0] as usize));
    community.baseline_prevalence = if n_tested > 0 { n_pos as f64 / n_tested as f64 } else { 0.0 };
    let (n_male, n_circ) = individuals
        .iter()
        .filter(|i| !i.female)
        .fold((0usize, 0usize), |(n, k), i| (n + 1, k + i.circumcised as usize));
    community.mc_coverage = if n_male > 0 { n_circ as f64 / n_male as f64 } else { 0.0 };
    community.individuals = individuals;
}

/// Communities with their populations, generated in parallel; the result
/// does not depend on the number of worker threads.
pub fn simulate_population(config: &ScenarioConfig, seed: u64) -> Result<Vec<SimCommunity>> {
    let rng = RngStream::new(seed, &[]);
    let mut communities = gen_communities(config, &rng)?;
    communities
        .par_iter_mut()
        .for_each(|c| gen_individuals(c, config, &rng));
    Ok(communities)
}

/// Observed-data projection of a community's cohort under `arm`, using
/// baseline and year-3 values only.
pub fn incidence_cohort(community: &SimCommunity, arm: Arm) -> Cohort {
    let male = CovariateValue::Cat("M".into());
    let female = CovariateValue::Cat("F".into());
    let ages: Vec<CovariateValue> = AGE_GROUPS.iter().map(|a| CovariateValue::Cat((*a).into())).collect();
    let records = community
        .individuals
        .iter()
        .filter(|i| i.in_cohort())
        .map(|i| {
            let h = i.history(arm);
            let censored = h.c[3];
            let measured = !censored && h.delta[3];
            let w = vec![
                ages[i.age_group as usize].clone(),
                if i.female { female.clone() } else { male.clone() },
                CovariateValue::Num(i.circumcised as u8 as f64),
            ];
            IndividualRecord::new(i.id, w, censored, measured, measured.then_some(h.y[3]))
        })
        .collect();
    Cohort {
        community_id: community.id.clone(),
        covariate_names: COHORT_COVARIATES.iter().map(|s| s.to_string()).collect(),
        records,
    }
}

/// Counterfactual truth for a set of communities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub psi1: f64,
    pub psi0: f64,
    pub ratio: f64,
    pub per_community: BTreeMap<String, [f64; 2]>,
}

pub fn sample_truth(communities: &[SimCommunity]) -> Result<SampleTruth> {
    if communities.is_empty() {
        return Err(Error::invalid("no communities"));
    }
    let mut per_community = BTreeMap::new();
    let (mut s0, mut s1) = (0.0, 0.0);
    for c in communities {
        let y0 = c.true_incidence(Arm::Control)?;
        let y1 = c.true_incidence(Arm::Intervention)?;
        s0 += y0;
        s1 += y1;
        per_community.insert(c.id.clone(), [y0, y1]);
    }
    let j = communities.len() as f64;
    let (psi0, psi1) = (s0 / j, s1 / j);
    if psi0 == 0.0 {
        return Err(Error::RatioUndefined);
    }
    Ok(SampleTruth {
        psi1,
        psi0,
        ratio: psi1 / psi0,
        per_community,
    })
}

/// Mean counterfactual incidence under intervention over mean under
/// control, with no censoring or missingness.
pub fn true_sample_ratio(communities: &[SimCommunity]) -> Result<f64> {
    sample_truth(communities).map(|t| t.ratio)
}

/// Matched-pair coefficient of variation of the control-arm outcomes:
/// `sqrt(Σ_k (Y_k1 − Y_k2)² / (2K)) / mean(Y)`.
pub fn km_pair_cv(pairing: &MatchedPairing, control_truths: &BTreeMap<String, f64>) -> Result<f64> {
    if pairing.is_empty() {
        return Err(Error::invalid("empty pairing"));
    }
    let get = |id: &str| {
        control_truths
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no control outcome for '{id}'")))
    };
    let mut ss = 0.0;
    let mut sum = 0.0;
    for (a, b) in &pairing.pairs {
        let (ya, yb) = (get(a)?, get(b)?);
        ss += (ya - yb).powi(2);
        sum += ya + yb;
    }
    let k = pairing.len() as f64;
    let mean = sum / (2.0 * k);
    if mean == 0.0 {
        return Err(Error::invalid("mean control outcome is zero"));
    }
    Ok((ss / (2.0 * k)).sqrt() / mean)
}
