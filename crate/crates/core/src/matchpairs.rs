//! Optimal non-bipartite pair matching of communities within region.
//!
//! Regions are small (at most 16 communities), so the minimum-distance
//! perfect matching is found exactly by dynamic programming over subsets.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest region the subset DP accepts.
pub const MAX_REGION_SIZE: usize = 16;

/// Anything that can be matched: an identifier, a region and named
/// baseline covariates.
pub trait Matchable {
    fn id(&self) -> &str;
    fn region(&self) -> &str;
    fn covariate(&self, name: &str) -> Option<f64>;
}

/// A community awaiting matching: identifier, region and numeric
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub region: String,
    pub covariates: BTreeMap<String, f64>,
}

impl Matchable for Candidate {
    fn id(&self) -> &str {
        &self.id
    }
    fn region(&self) -> &str {
        &self.region
    }
    fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairing {
    pub pairs: Vec<(String, String)>,
    pub pair_distance: Vec<f64>,
    pub total_distance: f64,
}

impl MatchedPairing {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Map from community id to its pair index.
    pub fn pair_index(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::with_capacity(2 * self.pairs.len());
        for (k, (a, b)) in self.pairs.iter().enumerate() {
            m.insert(a.as_str(), k);
            m.insert(b.as_str(), k);
        }
        m
    }
}

/// Euclidean distance between componentwise-standardised vectors.
pub fn covariate_distance(a: &[f64], b: &[f64], scales: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != scales.len() {
        return Err(Error::invalid("covariate vectors and scales differ in length"));
    }
    let mut s = 0.0;
    for ((x, y), sd) in a.iter().zip(b).zip(scales) {
        if !(*sd > 0.0) {
            return Err(Error::invalid(format!("non-positive scale {sd}")));
        }
        let d = (x - y) / sd;
        s += d * d;
    }
    Ok(s.sqrt())
}

fn covariate_vector<C: Matchable>(c: &C, vars: &[&str]) -> Result<Vec<f64>> {
    vars.iter()
        .map(|v| {
            c.covariate(v).ok_or_else(|| {
                Error::invalid(format!("community '{}' lacks covariate '{v}'", c.id()))
            })
        })
        .collect()
}

/// Sample standard deviation of each matching variable over the whole
/// candidate pool.
pub fn pool_scales<C: Matchable>(communities: &[C], vars: &[&str]) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = communities
        .iter()
        .map(|c| covariate_vector(c, vars))
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("need at least two communities to scale"));
    }
    (0..vars.len())
        .map(|k| {
            let m = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let v = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = v.sqrt();
            if sd > 0.0 {
                Ok(sd)
            } else {
                Err(Error::invalid(format!(
                    "matching variable '{}' has zero spread",
                    vars[k]
                )))
            }
        })
        .collect()
}

/// Minimum-total-cost perfect matching of `0..n` for an even `n ≤ 16`.
/// Among optima, returns the lexicographically smallest list of pairs
/// (each pair written smaller index first, pairs ordered by first index).
pub fn min_cost_perfect_matching(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    assert!(n % 2 == 0 && n <= MAX_REGION_SIZE);
    if n == 0 {
        return Vec::new();
    }
    let full = (1usize << n) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    let mut choice = vec![0u8; full + 1];
    best[0] = 0.0;
    for mask in 1..=full {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut j_bits = rest;
        while j_bits != 0 {
            let j = j_bits.trailing_zeros() as usize;
            j_bits &= j_bits - 1;
            let v = cost[i][j] + best[rest & !(1 << j)];
            if v < best[mask] {
                best[mask] = v;
                choice[mask] = j as u8;
            }
        }
    }
    let mut pairs = Vec::with_capacity(n / 2);
    let mut mask = full;
    while mask != 0 {
        let i = mask.trailing_zeros() as usize;
        let j = choice[mask] as usize;
        pairs.push((i, j));
        mask &= !(1 << i) & !(1 << j);
    }
    pairs
}

/// Pair communities within each region on `match_vars`, minimising the
/// total standardised distance. Regions are processed in name order and
/// communities within a region in id order, so the result does not depend
/// on input order.
pub fn optimal_pairs_within_region<C: Matchable>(
    communities: &[C],
    match_vars: &[&str],
) -> Result<MatchedPairing> {
    let scales = pool_scales(communities, match_vars)?;
    let mut by_region: BTreeMap<&str, Vec<&C>> = BTreeMap::new();
    for c in communities {
        by_region.entry(c.region()).or_default().push(c);
    }
    let mut pairing = MatchedPairing {
        pairs: Vec::new(),
        pair_distance: Vec::new(),
        total_distance: 0.0,
    };
    for (region, mut members) in by_region {
        let count = members.len();
        if count % 2 == 1 {
            return Err(Error::OddRegion {
                region: region.to_string(),
                count,
            });
        }
        if count > MAX_REGION_SIZE {
            return Err(Error::RegionTooLarge {
                region: region.to_string(),
                count,
            });
        }
        members.sort_by(|a, b| a.id().cmp(b.id()));
        let x: Vec<Vec<f64>> = members
            .iter()
            .map(|c| covariate_vector(*c, match_vars))
            .collect::<Result<_>>()?;
        let mut cost = vec![vec![0.0; count]; count];
        for i in 0..count {
            for j in (i + 1)..count {
                let d = covariate_distance(&x[i], &x[j], &scales)?;
                cost[i][j] = d;
                cost[j][i] = d;
            }
        }
        for (i, j) in min_cost_perfect_matching(&cost) {
            pairing
                .pairs
                .push((members[i].id().to_string(), members[j].id().to_string()));
            pairing.pair_distance.push(cost[i][j]);
        }
    }
    pairing.total_distance = pairing.pair_distance.iter().sum();
    Ok(pairing)
}

/// Absolute within-pair difference in `var`, in pairing order.
pub fn pair_discrepancy<C: Matchable>(
    pairing: &MatchedPairing,
    communities: &[C],
    var: &str,
) -> Result<Vec<f64>> {
    let lookup: HashMap<&str, &C> = communities.iter().map(|c| (c.id(), c)).collect();
    let value = |id: &str| -> Result<f64> {
        let c = lookup
            .get(id)
            .ok_or_else(|| Error::invalid(format!("community '{id}' not found")))?;
        c.covariate(var)
            .ok_or_else(|| Error::invalid(format!("community '{id}' lacks '{var}'")))
    };
    pairing
        .pairs
        .iter()
        .map(|(a, b)| Ok((value(a)? - value(b)?).abs()))
        .collect()
}
