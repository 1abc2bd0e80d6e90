//! Flat file formats: community and individual CSVs, pairings, and JSON
//! reports. Floats are written with Rust's shortest round-trip formatting,
//! so a file read back reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matchpairs::{Candidate, MatchedPairing};
use crate::power::CurvePoint;
use crate::stage1::{Cohort, CovariateValue, IndividualRecord};
use crate::stage2::{Arm, CommunityRecord};

const COMMUNITY_FIXED: [&str; 4] = ["id", "region", "pair_id", "arm"];
const COMMUNITY_TAIL: [&str; 2] = ["y", "denominator"];
const INDIVIDUAL_FIXED: [&str; 2] = ["id", "community_id"];
const INDIVIDUAL_TAIL: [&str; 3] = ["c", "delta", "i"];

fn bool01(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_bool(field: &str, what: &str) -> Result<bool> {
    match field.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::invalid(format!("{what}: expected 0 or 1, found '{other}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{what}: cannot parse '{field}'")))
}

/// `id, region, pair_id, arm, <covariates…>, y, denominator`. Covariate
/// columns are the union of names across records, in sorted order.
pub fn write_communities<W: Write>(out: W, communities: &[CommunityRecord]) -> Result<()> {
    let names: Vec<String> = communities
        .iter()
        .flat_map(|c| c.covariates.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = COMMUNITY_FIXED
        .iter()
        .copied()
        .chain(names.iter().map(String::as_str))
        .chain(COMMUNITY_TAIL)
        .collect();
    w.write_record(&header)?;
    for c in communities {
        let mut row = vec![
            c.id.clone(),
            c.region.clone(),
            c.pair_id.to_string(),
            bool01(c.arm == Arm::Intervention).to_string(),
        ];
        for n in &names {
            row.push(c.covariates.get(n).map_or(String::new(), |v| v.to_string()));
        }
        row.push(c.y.to_string());
        row.push(c.denominator.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_communities`]; every weight is set to 1.
pub fn read_communities<R: Read>(input: R) -> Result<Vec<CommunityRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("communities file lacks column '{name}'")))
    };
    let (i_id, i_region, i_pair, i_arm) = (col("id")?, col("region")?, col("pair_id")?, col("arm")?);
    let (i_y, i_den) = (col("y")?, col("denominator")?);
    let covariate_cols: Vec<(usize, &String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !COMMUNITY_FIXED.contains(&h.as_str()) && !COMMUNITY_TAIL.contains(&h.as_str()))
        .collect();
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |what: &str| format!("communities row {}: {what}", line + 1);
        let mut covariates = BTreeMap::new();
        for (k, name) in &covariate_cols {
            let f = rec.get(*k).unwrap_or("");
            if !f.trim().is_empty() {
                covariates.insert((*name).clone(), parse_num(f, &at(name))?);
            }
        }
        out.push(CommunityRecord {
            id: rec[i_id].to_string(),
            region: rec[i_region].to_string(),
            pair_id: parse_num(&rec[i_pair], &at("pair_id"))?,
            covariates,
            arm: if parse_bool(&rec[i_arm], &at("arm"))? {
                Arm::Intervention
            } else {
                Arm::Control
            },
            y: parse_num(&rec[i_y], &at("y"))?,
            denominator: parse_num(&rec[i_den], &at("denominator"))?,
            weight: 1.0,
        });
    }
    Ok(out)
}

/// `id, community_id, <W…>, c, delta, i`, one block per cohort. All
/// cohorts must share covariate names; `i` is empty when unmeasured.
pub fn write_individuals<W: Write>(out: W, cohorts: &[Cohort]) -> Result<()> {
    let names = match cohorts.first() {
        Some(c) => c.covariate_names.clone(),
        None => Vec::new(),
    };
    if cohorts.iter().any(|c| c.covariate_names != names) {
        return Err(Error::invalid("cohorts have different covariate names"));
    }
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = INDIVIDUAL_FIXED
        .iter()
        .copied()
        .chain(names.iter().map(String::as_str))
        .chain(INDIVIDUAL_TAIL)
        .collect();
    w.write_record(&header)?;
    for cohort in cohorts {
        for r in &cohort.records {
            let mut row = vec![r.id.to_string(), cohort.community_id.clone()];
            row.extend(r.w.iter().map(|v| v.to_string()));
            row.push(bool01(r.censored).into());
            row.push(bool01(r.measured).into());
            row.push(r.outcome.map_or(String::new(), |i| bool01(i).into()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_individuals`]; cohorts come back in order of first
/// appearance.
pub fn read_individuals<R: Read>(input: R) -> Result<Vec<Cohort>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    if n < 5
        || header[..2] != INDIVIDUAL_FIXED.map(String::from)
        || header[n - 3..] != INDIVIDUAL_TAIL.map(String::from)
    {
        return Err(Error::invalid(
            "individuals file must have columns id, community_id, <covariates>, c, delta, i",
        ));
    }
    let names: Vec<String> = header[2..n - 3].to_vec();
    let mut cohorts: Vec<Cohort> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |what: &str| format!("individuals row {}: {what}", line + 1);
        let community = rec[1].to_string();
        let k = *index.entry(community.clone()).or_insert_with(|| {
            cohorts.push(Cohort {
                community_id: community,
                covariate_names: names.clone(),
                records: Vec::new(),
            });
            cohorts.len() - 1
        });
        let w = (2..n - 3).map(|j| CovariateValue::parse(&rec[j])).collect();
        let censored = parse_bool(&rec[n - 3], &at("c"))?;
        let measured = parse_bool(&rec[n - 2], &at("delta"))?;
        let outcome = match rec[n - 1].trim() {
            "" => None,
            f => Some(parse_bool(f, &at("i"))?),
        };
        let record = IndividualRecord::new(parse_num(&rec[0], &at("id"))?, w, censored, measured, outcome);
        record.validate()?;
        cohorts[k].records.push(record);
    }
    Ok(cohorts)
}

/// Communities to be matched: `id` and `region` columns plus numeric
/// covariates. Columns of the community schema that are not covariates
/// (`pair_id`, `arm`, `y`, `denominator`) are ignored, as are empty cells.
pub fn read_candidates<R: Read>(input: R) -> Result<Vec<Candidate>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("communities file lacks column '{name}'")))
    };
    let (i_id, i_region) = (col("id")?, col("region")?);
    let skip = ["id", "region", "pair_id", "arm", "y", "denominator"];
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut covariates = BTreeMap::new();
        for (k, name) in header.iter().enumerate() {
            let f = rec.get(k).unwrap_or("");
            if skip.contains(&name.as_str()) || f.trim().is_empty() {
                continue;
            }
            covariates.insert(name.clone(), parse_num(f, &format!("communities row {}: {name}", line + 1))?);
        }
        out.push(Candidate {
            id: rec[i_id].to_string(),
            region: rec[i_region].to_string(),
            covariates,
        });
    }
    Ok(out)
}

/// `pi0, km, m, pairs, detectable_reduction`; the last is empty when the
/// design cannot reach the requested power.
pub fn write_curve<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pi0", "km", "m", "pairs", "detectable_reduction"])?;
    for p in points {
        w.write_record([
            p.pi0.to_string(),
            p.km.to_string(),
            p.m.to_string(),
            p.pairs.to_string(),
            p.detectable_reduction.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `pair_id, community_a, community_b, distance`; pair ids start at 1.
pub fn write_pairing<W: Write>(out: W, pairing: &MatchedPairing) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "community_a", "community_b", "distance"])?;
    for (k, ((a, b), d)) in pairing.pairs.iter().zip(&pairing.pair_distance).enumerate() {
        w.write_record([(k + 1).to_string(), a.clone(), b.clone(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairing<R: Read>(input: R) -> Result<MatchedPairing> {
    let mut r = csv::Reader::from_reader(input);
    let mut pairs = Vec::new();
    let mut pair_distance = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::invalid(format!("pairing row {}: expected 4 fields", line + 1)));
        }
        pairs.push((rec[1].to_string(), rec[2].to_string()));
        pair_distance.push(parse_num::<f64>(&rec[3], &format!("pairing row {}: distance", line + 1))?);
    }
    let total_distance = pair_distance.iter().sum();
    Ok(MatchedPairing {
        pairs,
        pair_distance,
        total_distance,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}
