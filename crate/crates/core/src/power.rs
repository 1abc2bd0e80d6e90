//! Sample size and detectable effect for an unadjusted comparison of
//! proportions in a pair-matched cluster randomized trial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    /// Number of matched pairs.
    pub pairs: u32,
    /// Individuals per community with the outcome measured.
    pub m: f64,
    /// Control-arm cumulative incidence.
    pub pi0: f64,
    /// Matched-pair coefficient of variation.
    pub km: f64,
    /// Two-sided significance level.
    pub alpha: f64,
    pub power: f64,
}

impl Default for PowerSpec {
    fn default() -> Self {
        PowerSpec {
            pairs: 16,
            m: 2700.0,
            pi0: 0.01,
            km: 0.4,
            alpha: 0.05,
            power: 0.8,
        }
    }
}

impl PowerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pairs >= 2
            && self.m > 0.0
            && self.m.is_finite()
            && self.pi0 > 0.0
            && self.pi0 < 1.0
            && self.km >= 0.0
            && self.km.is_finite()
            && self.alpha > 0.0
            && self.alpha < 1.0
            && self.power > 0.0
            && self.power < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("power specification out of range: {self:?}")))
        }
    }

    fn z_sum_sq(&self) -> f64 {
        let z = normal_quantile(1.0 - self.alpha / 2.0) + normal_quantile(self.power);
        z * z
    }
}

/// Number of pairs needed to detect `pi1` against `spec.pi0`, unrounded:
///
/// `2 + (z_{α/2} + z_β)² [ (π₀(1−π₀) + π₁(1−π₁))/m + k_m²(π₀² + π₁²) ] / (π₀ − π₁)²`
pub fn pairs_required(spec: &PowerSpec, pi1: f64) -> f64 {
    let PowerSpec { m, pi0, km, .. } = *spec;
    let binomial = (pi0 * (1.0 - pi0) + pi1 * (1.0 - pi1)) / m;
    let between = km * km * (pi0 * pi0 + pi1 * pi1);
    2.0 + spec.z_sum_sq() * (binomial + between) / ((pi0 - pi1) * (pi0 - pi1))
}

/// Smallest relative reduction `r` with `pairs_required(π₀(1 − r)) ≤ pairs`.
pub fn detectable_reduction(spec: &PowerSpec) -> Result<f64> {
    spec.validate()?;
    let target = f64::from(spec.pairs);
    let needed = |r: f64| pairs_required(spec, spec.pi0 * (1.0 - r));
    // The requirement falls monotonically in r; check the r → 1 limit.
    let mut hi = 1.0 - 1e-12;
    if needed(hi) > target {
        return Err(Error::Underpowered);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if needed(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Detectable reductions for all pairs at `km` and for one pair fewer at
/// `km_reduced`.
pub fn drop_pair_tradeoff(spec: &PowerSpec, km_reduced: f64) -> Result<(f64, f64)> {
    if !(km_reduced >= 0.0 && km_reduced <= spec.km) {
        return Err(Error::invalid("reduced k_m must lie in [0, k_m]"));
    }
    let full = detectable_reduction(spec)?;
    let dropped = detectable_reduction(&PowerSpec {
        pairs: spec.pairs - 1,
        km: km_reduced,
        ..*spec
    })?;
    Ok((full, dropped))
}

/// One row of a detectable-effect curve grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub pi0: f64,
    pub km: f64,
    pub m: f64,
    pub pairs: u32,
    pub detectable_reduction: Option<f64>,
}

impl CurvePoint {
    pub fn evaluate(spec: &PowerSpec) -> Self {
        CurvePoint {
            pi0: spec.pi0,
            km: spec.km,
            m: spec.m,
            pairs: spec.pairs,
            detectable_reduction: detectable_reduction(spec).ok(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridVar {
    Pi0,
    Km,
    M,
    Pairs,
}

/// One varied parameter of a curve grid, written `VAR=START:STOP:STEP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub var: GridVar,
    pub values: Vec<f64>,
}

impl std::str::FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("grid axis '{s}' is not VAR=START:STOP:STEP"));
        let (name, range) = s.split_once('=').ok_or_else(bad)?;
        let var = match name.trim() {
            "pi0" => GridVar::Pi0,
            "km" => GridVar::Km,
            "m" => GridVar::M,
            "pairs" => GridVar::Pairs,
            other => return Err(Error::invalid(format!("unknown grid variable '{other}'"))),
        };
        let parts: Vec<f64> = range
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::invalid(format!("grid axis '{s}' needs START ≤ STOP and STEP > 0")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        let values = (0..n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect();
        Ok(GridAxis { var, values })
    }
}

/// Detectable reductions over the Cartesian product of `axes` (first axis
/// outermost), other parameters taken from `base`.
pub fn curve_grid(base: &PowerSpec, axes: &[GridAxis]) -> Result<Vec<CurvePoint>> {
    let mut specs = vec![*base];
    for axis in axes {
        let mut next = Vec::with_capacity(specs.len() * axis.values.len());
        for s in &specs {
            for &v in &axis.values {
                let mut t = *s;
                match axis.var {
                    GridVar::Pi0 => t.pi0 = v,
                    GridVar::Km => t.km = v,
                    GridVar::M => t.m = v,
                    GridVar::Pairs => {
                        if v.fract() != 0.0 || v < 0.0 {
                            return Err(Error::invalid(format!("pairs must be a whole number, got {v}")));
                        }
                        t.pairs = v as u32;
                    }
                }
                t.validate()?;
                next.push(t);
            }
        }
        specs = next;
    }
    Ok(specs.iter().map(CurvePoint::evaluate).collect())
}
