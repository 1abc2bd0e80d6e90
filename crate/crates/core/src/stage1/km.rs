use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Product-limit survival curve. `survival[k]` holds on
/// `[times[k], times[k+1])`; before `times[0]` survival is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub horizon: f64,
    /// 1 − S(horizon).
    pub risk_at_horizon: f64,
}

impl KmCurve {
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Kaplan-Meier estimator from the times of subjects with an event and
/// the times of subjects censored. At tied times events are counted
/// before censorings, so subjects censored at `t` are still at risk at `t`.
pub fn kaplan_meier(event_times: &[f64], censor_times: &[f64], horizon: f64) -> Result<KmCurve> {
    if event_times.is_empty() && censor_times.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    if event_times.iter().chain(censor_times).any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid("times must be finite and non-negative"));
    }
    let mut events = event_times.to_vec();
    events.sort_by(f64::total_cmp);
    let mut censored = censor_times.to_vec();
    censored.sort_by(f64::total_cmp);

    let total = events.len() + censored.len();
    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        horizon,
        risk_at_horizon: 0.0,
    };
    let mut s = 1.0;
    let mut removed = 0usize; // subjects with time strictly before the current time
    let (mut ei, mut ci) = (0usize, 0usize);
    while ei < events.len() {
        let t = events[ei];
        while ci < censored.len() && censored[ci] < t {
            ci += 1;
            removed += 1;
        }
        let mut d = 0usize;
        while ei < events.len() && events[ei] == t {
            d += 1;
            ei += 1;
        }
        let n = total - removed;
        s *= 1.0 - d as f64 / n as f64;
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
        removed += d;
    }
    curve.risk_at_horizon = 1.0 - curve.survival_at(horizon);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let km = kaplan_meier(&[1.0], &[0.5, 2.0], 3.0).unwrap();
        assert_eq!(km.survival_at(1.0), 0.5);
        assert_eq!(km.survival_at(0.99), 1.0);
        assert_eq!(km.risk_at_horizon, 0.5);
    }

    #[test]
    fn no_events() {
        let km = kaplan_meier(&[], &[1.0, 2.0, 3.0], 10.0).unwrap();
        for t in [0.0, 1.5, 100.0] {
            assert_eq!(km.survival_at(t), 1.0);
        }
    }

    #[test]
    fn ties_event_before_censoring() {
        // two at risk at t=1: one event, one censored → S = 1/2
        let km = kaplan_meier(&[1.0], &[1.0], 1.0).unwrap();
        assert_eq!(km.survival_at(1.0), 0.5);
        assert_eq!(km.at_risk, vec![2]);
    }

    #[test]
    fn empty_rejected() {
        assert!(kaplan_meier(&[], &[], 1.0).is_err());
        assert!(kaplan_meier(&[-1.0], &[], 1.0).is_err());
    }
}
