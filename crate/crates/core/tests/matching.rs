mod common;

use std::collections::{BTreeMap, BTreeSet};

use pairtrial::matchpairs::{
    covariate_distance, min_cost_perfect_matching, optimal_pairs_within_region, pair_discrepancy, Candidate,
};
use pairtrial::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn candidate(id: &str, region: &str, x: f64, y: f64) -> Candidate {
    Candidate {
        id: id.into(),
        region: region.into(),
        covariates: BTreeMap::from([("x".to_string(), x), ("y".to_string(), y)]),
    }
}

fn random_cost(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    (0..n)
        .map(|i| (0..n).map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()).collect())
        .collect()
}

#[test]
fn there_are_105_matchings_of_eight() {
    assert_eq!(common::all_matchings(8).len(), 105);
}

#[test]
fn dp_equals_enumeration() {
    let mut rng = common::rng(11);
    for case in 0..50 {
        let n = 2 * rng.random_range(1..=4);
        let cost = random_cost(&mut rng, n);
        let (best, pairs) = common::brute_force_matching(&cost);
        let dp = min_cost_perfect_matching(&cost);
        let total: f64 = dp.iter().map(|&(i, j)| cost[i][j]).sum();
        assert_eq!(dp.into_iter().collect::<BTreeSet<_>>(), pairs, "case {case}");
        assert!((total - best).abs() <= 1e-12 * best.max(1.0));
    }
}

#[test]
fn line_example() {
    let cs: Vec<Candidate> = [0.0, 1.0, 10.0, 11.0]
        .iter()
        .enumerate()
        .map(|(i, &x)| candidate(&format!("c{i}"), "r", x, 0.0))
        .collect();
    let p = optimal_pairs_within_region(&cs, &["x"]).unwrap();
    assert_eq!(p.pairs, vec![("c0".into(), "c1".into()), ("c2".into(), "c3".into())]);
    // Distances are in pool-SD units; the crossing matching costs ten times as much.
    let sd = p.pair_distance[0];
    assert!((p.total_distance - 2.0 * sd).abs() < 1e-12);
}

#[test]
fn two_communities_form_the_only_pair() {
    let cs = vec![candidate("a", "r", 0.0, 1.0), candidate("b", "r", 3.0, 5.0)];
    let p = optimal_pairs_within_region(&cs, &["x", "y"]).unwrap();
    assert_eq!(p.pairs, vec![("a".into(), "b".into())]);
    let sx = (4.5f64).sqrt();
    let sy = (8.0f64).sqrt();
    let expected = ((3.0 / sx).powi(2) + (4.0 / sy).powi(2)).sqrt();
    assert!((p.total_distance - expected).abs() < 1e-12);
}

#[test]
fn odd_and_oversized_regions_are_errors() {
    let cs = vec![
        candidate("a", "east", 0.0, 0.0),
        candidate("b", "east", 1.0, 1.0),
        candidate("c", "west", 2.0, 0.5),
    ];
    match optimal_pairs_within_region(&cs, &["x"]) {
        Err(Error::OddRegion { region, count }) => assert_eq!((region.as_str(), count), ("west", 1)),
        other => panic!("{other:?}"),
    }
    let big: Vec<Candidate> = (0..18).map(|i| candidate(&format!("c{i:02}"), "r", i as f64, 0.0)).collect();
    assert!(matches!(optimal_pairs_within_region(&big, &["x"]), Err(Error::RegionTooLarge { .. })));
}

#[test]
fn distance_examples() {
    assert_eq!(covariate_distance(&[0.3, 0.4], &[0.3, 0.4], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(covariate_distance(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert!(covariate_distance(&[1.0], &[0.0], &[0.0]).is_err());
}

#[test]
fn discrepancy_examples() {
    let cs = vec![
        candidate("a", "r", 0.10, 0.0),
        candidate("b", "r", 0.06, 0.0),
        candidate("c", "r", 0.2, 0.0),
        candidate("d", "r", 0.2, 0.0),
    ];
    let p = optimal_pairs_within_region(&cs, &["x"]).unwrap();
    let d = pair_discrepancy(&p, &cs, "x").unwrap();
    assert!((d[0] - 0.04).abs() < 1e-15);
    assert_eq!(d[1], 0.0);
    assert!(pair_discrepancy(&p, &cs, "z").is_err());
}

fn fuzz_pool(rng: &mut ChaCha8Rng) -> Vec<Candidate> {
    let mut out = Vec::new();
    for r in 0..rng.random_range(1..=3) {
        let n = 2 * rng.random_range(1..=5);
        for i in 0..n {
            out.push(candidate(
                &format!("r{r}c{i:02}"),
                &format!("region{r}"),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.0..0.4),
            ));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairing_invariants(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let cs = fuzz_pool(&mut rng);
        let p = optimal_pairs_within_region(&cs, &["x", "y"]).unwrap();
        let region: BTreeMap<&str, &str> = cs.iter().map(|c| (c.id.as_str(), c.region.as_str())).collect();
        let mut seen = BTreeSet::new();
        for (a, b) in &p.pairs {
            prop_assert_eq!(region[a.as_str()], region[b.as_str()]);
            prop_assert!(seen.insert(a.clone()) && seen.insert(b.clone()));
        }
        prop_assert_eq!(seen.len(), cs.len());
        prop_assert!((p.total_distance - p.pair_distance.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn dp_beats_random_matchings(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let n = 2 * rng.random_range(2..=8);
        let cost = random_cost(&mut rng, n);
        let best: f64 = min_cost_perfect_matching(&cost).iter().map(|&(i, j)| cost[i][j]).sum();
        let mut idx: Vec<usize> = (0..n).collect();
        for _ in 0..1000 {
            idx.shuffle(&mut rng);
            let total: f64 = idx.chunks(2).map(|p| cost[p[0]][p[1]]).sum();
            prop_assert!(best <= total + 1e-12);
        }
    }

    #[test]
    fn input_order_does_not_matter(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let cs = fuzz_pool(&mut rng);
        let mut shuffled = cs.clone();
        shuffled.shuffle(&mut rng);
        let set = |v: &[Candidate]| -> BTreeSet<(String, String)> {
            optimal_pairs_within_region(v, &["x", "y"]).unwrap().pairs.into_iter().collect()
        };
        prop_assert_eq!(set(&cs), set(&shuffled));
    }

    #[test]
    fn distance_matches_formula(a in proptest::collection::vec(-5.0f64..5.0, 3), b in proptest::collection::vec(-5.0f64..5.0, 3), s in proptest::collection::vec(0.1f64..3.0, 3)) {
        let direct = ((a[0] - b[0]) / s[0]).hypot((a[1] - b[1]) / s[1]).hypot((a[2] - b[2]) / s[2]);
        prop_assert!((covariate_distance(&a, &b, &s).unwrap() - direct).abs() < 1e-12);
    }
}
