//! Total unsuppressed person-time reconstructed from baseline and year-3
//! measurements plus ART initiation dates.
//!
//! All dates are whole days from the community's baseline; person-time is
//! the half-open interval `[start, end)` with `end` the first of death,
//! out-migration and the close of year-3 tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lag from ART initiation to assumed suppression (six months).
pub const ART_LAG_DAYS: i64 = 182;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionClass {
    /// HIV-positive at or before baseline.
    BaselinePos,
    /// Negative at baseline, positive at year 3.
    Incident,
    /// Positive at year 3, not a baseline resident.
    InmigrantPos,
    /// Baseline resident without a baseline test, positive at year 3.
    MissingBaselinePos,
    /// Contributes person-time only.
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionRecord {
    pub id: String,
    pub classification: SuppressionClass,
    pub suppressed_at_baseline: Option<bool>,
    pub suppressed_at_y3: bool,
    pub art_start_date: Option<i64>,
    pub inmigration_date: Option<i64>,
    pub outmigration_date: Option<i64>,
    pub death_date: Option<i64>,
    pub window_end: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonTime {
    pub unsuppressed_days: i64,
    pub total_days: i64,
    pub proportion: f64,
}

impl SuppressionRecord {
    fn fail(&self, rule: &str) -> Error {
        Error::InconsistentRecord {
            id: self.id.clone(),
            rule: rule.to_string(),
        }
    }

    fn art(&self, rule: &str) -> Result<i64> {
        self.art_start_date.ok_or_else(|| self.fail(rule))
    }

    /// Resident interval `[start, end)`.
    pub fn resident_interval(&self) -> Result<(i64, i64)> {
        let w = self.window_end;
        if w <= 0 {
            return Err(self.fail("window_end must be positive"));
        }
        for d in [
            self.art_start_date,
            self.inmigration_date,
            self.outmigration_date,
            self.death_date,
        ]
        .into_iter()
        .flatten()
        {
            if !(0..=w).contains(&d) {
                return Err(self.fail("dates must lie within [0, window_end]"));
            }
        }
        let start = match self.classification {
            SuppressionClass::InmigrantPos => self
                .inmigration_date
                .ok_or_else(|| self.fail("in-migrant requires an in-migration date"))?,
            _ => {
                if self.inmigration_date.is_some() {
                    return Err(self.fail("only in-migrants carry an in-migration date"));
                }
                0
            }
        };
        let end = [self.outmigration_date, self.death_date]
            .into_iter()
            .flatten()
            .fold(w, i64::min);
        Ok((start, end.max(start)))
    }

    /// Interval assumed unsuppressed before clipping to residence.
    pub fn unsuppressed_interval(&self) -> Result<Option<(i64, i64)>> {
        use SuppressionClass::*;
        let w = self.window_end;
        let lagged = |art: i64| (art + ART_LAG_DAYS).min(w);
        let iv = match self.classification {
            BaselinePos => {
                let at_baseline = self
                    .suppressed_at_baseline
                    .ok_or_else(|| self.fail("baseline-positive requires baseline suppression status"))?;
                match (at_baseline, self.suppressed_at_y3) {
                    (true, true) => None,
                    (false, true) => Some((
                        0,
                        lagged(self.art("unsuppressed→suppressed requires an ART start date")?),
                    )),
                    (false, false) => Some((0, w)),
                    // Viral rebound: assume failure at the midpoint.
                    (true, false) => Some((w / 2, w)),
                }
            }
            Incident => {
                if self.suppressed_at_baseline.is_some() {
                    return Err(self.fail("incident infection has no baseline suppression status"));
                }
                if self.suppressed_at_y3 {
                    let art = self.art("incident suppressed infection requires an ART start date")?;
                    Some((art / 2, lagged(art)))
                } else {
                    Some((w / 2, w))
                }
            }
            InmigrantPos => {
                let arrival = self
                    .inmigration_date
                    .ok_or_else(|| self.fail("in-migrant requires an in-migration date"))?;
                if self.suppressed_at_y3 {
                    let art = self.art("suppressed in-migrant requires an ART start date")?;
                    Some((arrival, lagged(art)))
                } else {
                    Some((arrival, w))
                }
            }
            MissingBaselinePos => {
                if self.suppressed_at_y3 {
                    None
                } else {
                    Some((0, w))
                }
            }
            Negative => None,
        };
        Ok(iv)
    }

    /// (unsuppressed days, resident days).
    pub fn days(&self) -> Result<(i64, i64)> {
        let (start, end) = self.resident_interval()?;
        let unsuppressed = match self.unsuppressed_interval()? {
            Some((a, b)) => (b.min(end) - a.max(start)).max(0),
            None => 0,
        };
        Ok((unsuppressed, end - start))
    }
}

/// Community total of unsuppressed and resident person-days.
pub fn unsuppressed_person_time(records: &[SuppressionRecord]) -> Result<PersonTime> {
    let mut unsuppressed_days = 0;
    let mut total_days = 0;
    for r in records {
        let (u, t) = r.days()?;
        unsuppressed_days += u;
        total_days += t;
    }
    let proportion = if total_days > 0 {
        unsuppressed_days as f64 / total_days as f64
    } else {
        0.0
    };
    Ok(PersonTime {
        unsuppressed_days,
        total_days,
        proportion,
    })
}
