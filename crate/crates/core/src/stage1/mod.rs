//! Stage I: one outcome per community from individual-level records.

mod incidence;
mod km;
mod persontime;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub use incidence::{
    cumulative_incidence_empirical, cumulative_incidence_tmle, incidence_rate_midpoint,
    TargetedIncidence, G_MIN,
};
pub use km::{kaplan_meier, KmCurve};
pub use persontime::{
    unsuppressed_person_time, PersonTime, SuppressionClass, SuppressionRecord, ART_LAG_DAYS,
};

/// Baseline covariate value; categorical levels enter designs as
/// indicators against the smallest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Num(f64),
    Cat(Arc<str>),
}

impl CovariateValue {
    /// Numeric if it parses as a finite number, categorical otherwise.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => CovariateValue::Num(x),
            _ => CovariateValue::Cat(Arc::from(s.trim())),
        }
    }
}

impl std::fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovariateValue::Num(x) => write!(f, "{x}"),
            CovariateValue::Cat(s) => f.write_str(s),
        }
    }
}

/// One member of a community's incidence cohort: baseline covariates `W`,
/// censoring `C`, measurement `Δ` and the outcome `I`, known only when
/// measured.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub id: u64,
    /// Aligned with [`Cohort::covariate_names`].
    pub w: Vec<CovariateValue>,
    pub censored: bool,
    pub measured: bool,
    pub outcome: Option<bool>,
    pub event_time: Option<f64>,
    pub censor_time: Option<f64>,
}

impl IndividualRecord {
    pub fn new(id: u64, w: Vec<CovariateValue>, censored: bool, measured: bool, outcome: Option<bool>) -> Self {
        IndividualRecord {
            id,
            w,
            censored,
            measured,
            outcome,
            event_time: None,
            censor_time: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.measured != self.outcome.is_some() {
            return Err(Error::InconsistentRecord {
                id: self.id.to_string(),
                rule: "outcome must be present exactly when measured".into(),
            });
        }
        if self.event_time.is_some_and(|t| !(t >= 0.0)) || self.censor_time.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::InconsistentRecord {
                id: self.id.to_string(),
                rule: "times must be non-negative".into(),
            });
        }
        Ok(())
    }

    /// Uncensored with the outcome measured.
    pub fn observed(&self) -> bool {
        !self.censored && self.measured
    }
}

/// The incidence cohort of one community.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub community_id: String,
    pub covariate_names: Vec<String>,
    pub records: Vec<IndividualRecord>,
}

impl Cohort {
    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown covariate '{name}'")))
    }

    /// Design matrix `[1, W_vars...]` over all records. Numeric covariates
    /// enter as-is; categorical ones as indicators for every level but the
    /// smallest.
    pub fn design(&self, vars: &[&str]) -> Result<Matrix> {
        let n = self.records.len();
        let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for var in vars {
            let k = self.covariate_index(var)?;
            let values: Vec<&CovariateValue> = self.records.iter().map(|r| &r.w[k]).collect();
            if values.iter().all(|v| matches!(v, CovariateValue::Num(_))) {
                columns.push(
                    values
                        .iter()
                        .map(|v| match v {
                            CovariateValue::Num(x) => *x,
                            CovariateValue::Cat(_) => unreachable!(),
                        })
                        .collect(),
                );
            } else if values.iter().all(|v| matches!(v, CovariateValue::Cat(_))) {
                let levels: BTreeSet<&str> = values
                    .iter()
                    .map(|v| match v {
                        CovariateValue::Cat(s) => s.as_ref(),
                        CovariateValue::Num(_) => unreachable!(),
                    })
                    .collect();
                for level in levels.iter().skip(1) {
                    columns.push(
                        values
                            .iter()
                            .map(|v| match v {
                                CovariateValue::Cat(s) if s.as_ref() == *level => 1.0,
                                _ => 0.0,
                            })
                            .collect(),
                    );
                }
            } else {
                return Err(Error::invalid(format!(
                    "covariate '{var}' mixes numeric and categorical values"
                )));
            }
        }
        let p = columns.len();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for col in &columns {
                data.push(col[i]);
            }
        }
        Matrix::from_vec(n, p, data)
    }
}
