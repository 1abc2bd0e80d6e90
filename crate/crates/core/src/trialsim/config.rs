//! Scenario description for the trial simulator, with bundled presets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-arm, per-status probabilities. For censoring these are annual
/// probabilities of death or out-migration; for measurement they are
/// per-contact probabilities of being tested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStatusRates {
    pub control_neg: f64,
    pub control_pos: f64,
    pub intervention_neg: f64,
    pub intervention_pos: f64,
}

impl ArmStatusRates {
    pub const fn uniform(p: f64) -> Self {
        ArmStatusRates {
            control_neg: p,
            control_pos: p,
            intervention_neg: p,
            intervention_pos: p,
        }
    }

    pub fn get(&self, intervention: bool, positive: bool) -> f64 {
        match (intervention, positive) {
            (false, false) => self.control_neg,
            (false, true) => self.control_pos,
            (true, false) => self.intervention_neg,
            (true, true) => self.intervention_pos,
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        for p in [
            self.control_neg,
            self.control_pos,
            self.intervention_neg,
            self.intervention_pos,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{what}: probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringScenario {
    None,
    Nondifferential,
    Differential,
    /// Each community independently draws one of the three above.
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementScenario {
    Noninformative,
    /// Depends on arm and true HIV status.
    InformativeTrueStatus,
    /// Depends on arm and HIV status known from a prior positive test.
    InformativeKnownStatus,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringConfig {
    pub scenario: CensoringScenario,
    pub nondifferential: ArmStatusRates,
    pub differential: ArmStatusRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    pub scenario: MeasurementScenario,
    pub noninformative: ArmStatusRates,
    pub informative: ArmStatusRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub country: String,
    pub communities: usize,
    /// Centre of the baseline prevalence distribution.
    pub prevalence: f64,
    /// Centre of the male circumcision coverage distribution.
    pub mc_coverage: f64,
}

/// Annual hazards (per person-year) for years 1, 2 and 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceTrajectory {
    pub control: [f64; 3],
    pub intervention: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySpec {
    pub size_min: u32,
    pub size_max: u32,
    pub incidence: IncidenceTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    /// Within-block correlation for {E1,E2,E3}, {E4,E5,E6}, {E7,E8,E9}.
    pub block_correlation: [f64; 3],
}

/// `logit Z = logit(region prevalence) + b·(E1, E4, E7) + sd·U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceModel {
    pub coef_e1: f64,
    pub coef_e4: f64,
    pub coef_e7: f64,
    pub noise_sd: f64,
}

/// `logit Z2 = logit(region coverage) + b·E3 + sd·U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircumcisionModel {
    pub coef_e3: f64,
    pub noise_sd: f64,
}

/// Community hazard multiplier
/// `exp(b2 E2 + b5 E5 + b8 E8 + bZ (logit Z − logit Z̄) + bC (Z2 − Z̄2) + ε_t)`
/// with `ε_t = sd (√ρ η + √(1−ρ) ν_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub coef_e2: f64,
    pub coef_e5: f64,
    pub coef_e8: f64,
    pub coef_prevalence: f64,
    pub coef_mc: f64,
    pub noise_sd: f64,
    pub noise_correlation: f64,
}

/// Individual covariate distribution and relative risks. Age groups are
/// 15-24, 25-34 and 35+.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualModel {
    pub age_probs: [f64; 3],
    pub female_prob: f64,
    pub prevalence_rr_age: [f64; 3],
    pub prevalence_rr_female: f64,
    pub hazard_rr_age: [f64; 3],
    pub hazard_rr_female: f64,
    pub hazard_rr_circumcised: f64,
    /// Share of variance in each noise process that persists within an
    /// individual across years.
    pub persistence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub master_seed: u64,
    pub regions: Vec<RegionSpec>,
    pub countries: BTreeMap<String, CountrySpec>,
    /// Multiplies community sizes (e.g. 0.25 for quick runs).
    #[serde(default = "one")]
    pub size_scale: f64,
    pub baseline_coverage: (f64, f64),
    pub covariates: CovariateModel,
    pub prevalence: PrevalenceModel,
    pub circumcision: CircumcisionModel,
    pub hazard: HazardModel,
    pub individual: IndividualModel,
    pub censoring: CensoringConfig,
    pub measurement: MeasurementConfig,
    /// Force the intervention hazard to equal the control hazard.
    #[serde(default)]
    pub effect_null: bool,
}

fn one() -> f64 {
    1.0
}

pub const PRESET_NAMES: [&str; 3] = ["scenario-a", "scenario-b", "null"];

impl ScenarioConfig {
    /// Bundled presets: `scenario-a`, `scenario-b` (less and more
    /// conservative control-arm trajectories) and `null`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::scenario_a();
        match name {
            "scenario-a" => {}
            "scenario-b" => {
                cfg.name = "scenario-b".into();
                let ug = cfg.countries.get_mut("uganda").unwrap();
                ug.incidence = IncidenceTrajectory {
                    control: [0.0052, 0.0050, 0.0049],
                    intervention: [0.0043, 0.0032, 0.0029],
                };
                let ke = cfg.countries.get_mut("kenya").unwrap();
                ke.incidence = IncidenceTrajectory {
                    control: [0.0065, 0.0063, 0.0061],
                    intervention: [0.0054, 0.0040, 0.0036],
                };
            }
            "null" => {
                cfg.name = "null".into();
                cfg.effect_null = true;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected one of {PRESET_NAMES:?})"
                )))
            }
        }
        Ok(cfg)
    }

    fn scenario_a() -> Self {
        let mut countries = BTreeMap::new();
        countries.insert(
            "uganda".to_string(),
            CountrySpec {
                size_min: 4000,
                size_max: 6000,
                incidence: IncidenceTrajectory {
                    control: [0.0050, 0.0047, 0.0045],
                    intervention: [0.0041, 0.0030, 0.0027],
                },
            },
        );
        countries.insert(
            "kenya".to_string(),
            CountrySpec {
                size_min: 3500,
                size_max: 5480,
                incidence: IncidenceTrajectory {
                    control: [0.0063, 0.0059, 0.0056],
                    intervention: [0.0051, 0.0038, 0.0034],
                },
            },
        );
        ScenarioConfig {
            name: "scenario-a".into(),
            master_seed: 20130601,
            regions: vec![
                RegionSpec {
                    name: "Eastern Uganda".into(),
                    country: "uganda".into(),
                    communities: 10,
                    prevalence: 0.04,
                    mc_coverage: 0.45,
                },
                RegionSpec {
                    name: "Western Uganda".into(),
                    country: "uganda".into(),
                    communities: 10,
                    prevalence: 0.08,
                    mc_coverage: 0.25,
                },
                RegionSpec {
                    name: "Kenya".into(),
                    country: "kenya".into(),
                    communities: 12,
                    prevalence: 0.18,
                    mc_coverage: 0.55,
                },
            ],
            countries,
            size_scale: 1.0,
            baseline_coverage: (0.80, 0.90),
            covariates: CovariateModel {
                block_correlation: [0.25, 0.25, 0.0],
            },
            prevalence: PrevalenceModel {
                coef_e1: 0.20,
                coef_e4: 0.20,
                coef_e7: 0.20,
                noise_sd: 0.30,
            },
            circumcision: CircumcisionModel {
                coef_e3: 0.20,
                noise_sd: 0.30,
            },
            hazard: HazardModel {
                coef_e2: 0.05,
                coef_e5: 0.05,
                coef_e8: 0.05,
                coef_prevalence: 1.0,
                coef_mc: -0.5,
                noise_sd: 0.10,
                noise_correlation: 0.7,
            },
            individual: IndividualModel {
                age_probs: [0.40, 0.30, 0.30],
                female_prob: 0.52,
                prevalence_rr_age: [0.5, 1.3, 1.2],
                prevalence_rr_female: 1.3,
                hazard_rr_age: [1.4, 1.0, 0.5],
                hazard_rr_female: 1.2,
                hazard_rr_circumcised: 0.5,
                persistence: 0.5,
            },
            censoring: CensoringConfig {
                scenario: CensoringScenario::Nondifferential,
                nondifferential: ArmStatusRates::uniform(0.04),
                differential: ArmStatusRates {
                    control_neg: 0.04,
                    control_pos: 0.08,
                    intervention_neg: 0.03,
                    intervention_pos: 0.05,
                },
            },
            measurement: MeasurementConfig {
                scenario: MeasurementScenario::Noninformative,
                noninformative: ArmStatusRates {
                    control_neg: 0.85,
                    control_pos: 0.85,
                    intervention_neg: 0.90,
                    intervention_pos: 0.90,
                },
                informative: ArmStatusRates {
                    control_neg: 0.85,
                    control_pos: 0.75,
                    intervention_neg: 0.90,
                    intervention_pos: 0.95,
                },
            },
            effect_null: false,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a `.json` or `.toml` scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn total_communities(&self) -> usize {
        self.regions.iter().map(|r| r.communities).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.regions.is_empty() {
            return fail("no regions".into());
        }
        for r in &self.regions {
            if r.communities == 0 || r.communities % 2 == 1 {
                return fail(format!("region '{}' needs an even, positive community count", r.name));
            }
            if !self.countries.contains_key(&r.country) {
                return fail(format!("region '{}' refers to unknown country '{}'", r.name, r.country));
            }
            if !(r.prevalence > 0.0 && r.prevalence < 1.0 && r.mc_coverage > 0.0 && r.mc_coverage < 1.0) {
                return fail(format!("region '{}': prevalence and coverage must lie in (0,1)", r.name));
            }
        }
        for (name, c) in &self.countries {
            if c.size_min > c.size_max || c.size_min == 0 {
                return fail(format!("country '{name}': size bounds must satisfy 0 < min ≤ max"));
            }
            let all = c.incidence.control.iter().chain(&c.incidence.intervention);
            if all.clone().any(|h| !(*h >= 0.0) || !h.is_finite()) {
                return fail(format!("country '{name}': hazards must be finite and ≥ 0"));
            }
        }
        if !(self.size_scale > 0.0) {
            return fail("size_scale must be positive".into());
        }
        let (lo, hi) = self.baseline_coverage;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return fail("baseline coverage bounds must satisfy 0 ≤ min ≤ max ≤ 1".into());
        }
        if self.covariates.block_correlation.iter().any(|r| !(-0.5..=1.0).contains(r)) {
            return fail("block correlations must lie in [-0.5, 1]".into());
        }
        let ind = &self.individual;
        let probs_ok = ind.age_probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (ind.age_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            && (0.0..=1.0).contains(&ind.female_prob)
            && (0.0..=1.0).contains(&ind.persistence);
        if !probs_ok {
            return fail("individual model probabilities are invalid".into());
        }
        let rr = ind
            .prevalence_rr_age
            .iter()
            .chain(&ind.hazard_rr_age)
            .chain([&ind.prevalence_rr_female, &ind.hazard_rr_female, &ind.hazard_rr_circumcised]);
        if rr.into_iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return fail("relative risks must be finite and ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.hazard.noise_correlation) || self.hazard.noise_sd < 0.0 {
            return fail("hazard noise parameters are invalid".into());
        }
        if self.prevalence.noise_sd < 0.0 || self.circumcision.noise_sd < 0.0 {
            return fail("noise standard deviations must be ≥ 0".into());
        }
        self.censoring.nondifferential.check("censoring.nondifferential")?;
        self.censoring.differential.check("censoring.differential")?;
        self.measurement.noninformative.check("measurement.noninformative")?;
        self.measurement.informative.check("measurement.informative")?;
        Ok(())
    }
}
