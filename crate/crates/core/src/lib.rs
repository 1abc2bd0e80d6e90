//! # pairtrial
//!
//! Design, simulation and two-stage analysis of pair-matched, two-arm
//! cluster randomized trials with rare binary outcomes.
//!
//! - [`stage1`] turns individual records into one outcome per community
//!   (empirical or targeted cumulative incidence, midpoint incidence
//!   rates, Kaplan-Meier risk, unsuppressed person-time).
//! - [`stage2`] compares communities across arms: unadjusted and targeted
//!   estimators of the incidence ratio, influence-curve inference under
//!   pair matching, adaptive selection of the adjustment variable, and the
//!   drop-a-pair / break-the-match sensitivity analyses.
//! - [`matchpairs`] forms optimal within-region pairs.
//! - [`power`] gives the classical matched-pair sample size formulas.
//! - [`trialsim`] generates complete synthetic trials with known truth and
//!   [`replicate`] runs the Monte-Carlo operating-characteristics study.

pub mod error;
pub mod io;
pub mod matchpairs;
pub mod numkit;
pub mod power;
pub mod replicate;
pub mod stage1;
pub mod stage2;
pub mod trialsim;

pub use error::{Error, Result};
