mod common;

use std::collections::BTreeMap;

use common::{adjustment, fuzz_communities, FuzzOptions, ADJUSTMENTS};
use pairtrial::stage2::{
    adaptive_prespec, break_match_effect, drop_pair_sensitivity, tmle_effect, unadjusted_effect, Adjustment, Arm,
    CandidateLibrary, CommunityRecord, IcUnit, TmleFit,
};
use pairtrial::numkit::t_quantile;
use proptest::prelude::*;
use rand::Rng;

fn record(id: &str, pair: u32, arm: Arm, y: f64, bp: f64, mc: f64) -> CommunityRecord {
    CommunityRecord {
        id: id.into(),
        region: "r".into(),
        pair_id: pair,
        covariates: BTreeMap::from([
            ("baseline_prevalence".to_string(), bp),
            ("mc_coverage".to_string(), mc),
        ]),
        arm,
        y,
        denominator: 1000,
        weight: 1.0,
    }
}

fn from_pairs(yi: &[f64], yc: &[f64]) -> Vec<CommunityRecord> {
    let mut out = Vec::new();
    for (k, (a, b)) in yi.iter().zip(yc).enumerate() {
        let p = k as u32 + 1;
        out.push(record(&format!("i{k}"), p, Arm::Intervention, *a, 0.1 + 0.01 * k as f64, 0.5));
        out.push(record(&format!("c{k}"), p, Arm::Control, *b, 0.1 + 0.01 * k as f64, 0.4));
    }
    out
}

#[test]
fn unadjusted_examples() {
    let e = unadjusted_effect(&from_pairs(&[0.01, 0.02], &[0.02, 0.04])).unwrap();
    assert!((e.ratio - 0.5).abs() < 1e-15);
    let same = unadjusted_effect(&from_pairs(&[0.01, 0.02, 0.03], &[0.01, 0.02, 0.03])).unwrap();
    assert_eq!(same.ratio, 1.0);
    assert!(same.pair_ic.iter().all(|&v| v.abs() < 1e-15));
    assert!(unadjusted_effect(&from_pairs(&[0.01, 0.02], &[0.0, 0.0])).is_err());
}

#[test]
fn unadjusted_matches_direct_formulas() {
    let mut rng = common::rng(21);
    for _ in 0..200 {
        let cs = fuzz_communities(&mut rng, &FuzzOptions::default());
        let (psi1, psi0, ic, se) = common::unadjusted_oracle(&cs);
        let e = unadjusted_effect(&cs).unwrap();
        assert!((e.psi1 - psi1).abs() < 1e-14 && (e.psi0 - psi0).abs() < 1e-14);
        assert!((e.log_se - se).abs() < 1e-12 * se.max(1.0));
        for (a, b) in e.pair_ic.iter().zip(&ic) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(e.df, 15);
        let t = t_quantile(0.975, 15);
        assert!((e.ci_lower - ((psi1 / psi0).ln() - t * se).exp()).abs() < 1e-12);
    }
}

#[test]
fn balanced_covariate_reduces_standard_error() {
    // Each arm holds the same set of baseline prevalences, but the values
    // differ within pairs and drive the outcome.
    let mut rng = common::rng(22);
    let mut cs = Vec::new();
    for k in 0..16u32 {
        let (lo, hi) = (0.05 + 0.005 * k as f64, 0.25 - 0.005 * k as f64);
        let (bi, bc) = if k % 2 == 0 { (lo, hi) } else { (hi, lo) };
        for (arm, shift, bp) in [(Arm::Intervention, -0.4, bi), (Arm::Control, 0.0, bc)] {
            let y = common::expit(-5.5 + 10.0 * bp + shift + rng.random_range(-0.05..0.05));
            cs.push(record(&format!("{k}{}", arm.indicator()), k + 1, arm, y, bp, 0.5));
        }
    }
    let adj = tmle_effect(&cs, &Adjustment::covariate("baseline_prevalence"), &Adjustment::None).unwrap();
    let un = unadjusted_effect(&cs).unwrap();
    assert!(adj.log_se < un.log_se, "{} vs {}", adj.log_se, un.log_se);
}

#[test]
fn constant_candidates_select_nothing() {
    let mut rng = common::rng(23);
    let mut cs = fuzz_communities(&mut rng, &FuzzOptions::default());
    for c in &mut cs {
        c.covariates.insert("baseline_prevalence".into(), 0.1);
        c.covariates.insert("mc_coverage".into(), 0.4);
    }
    let e = adaptive_prespec(&cs, &CandidateLibrary::default()).unwrap();
    assert_eq!((e.selected_q_var.clone(), e.selected_g_var.clone()), (None, None));
    let u = unadjusted_effect(&cs).unwrap();
    assert!((e.ratio - u.ratio).abs() < 1e-10 && (e.log_se - u.log_se).abs() < 1e-10);
}

#[test]
fn strong_prevalence_signal_is_selected() {
    let mut hits = 0;
    for seed in 0..200 {
        let mut rng = common::rng(1000 + seed);
        let mut cs = Vec::new();
        for k in 0..16u32 {
            for (arm, shift) in [(Arm::Intervention, -0.35), (Arm::Control, 0.0)] {
                let bp = rng.random_range(0.05..0.30);
                let y = common::expit(-5.0 + 12.0 * bp + shift + rng.random_range(-0.1..0.1));
                cs.push(record(&format!("{k}{}", arm.indicator()), k + 1, arm, y, bp, rng.random_range(0.2..0.8)));
            }
        }
        let e = adaptive_prespec(&cs, &CandidateLibrary::default()).unwrap();
        hits += (e.selected_q_var.as_deref() == Some("baseline_prevalence")) as usize;
    }
    assert!(hits >= 180, "selected in {hits} of 200");
}

#[test]
fn selected_candidate_has_smallest_cv_variance() {
    let mut rng = common::rng(24);
    for _ in 0..30 {
        let cs = fuzz_communities(&mut rng, &FuzzOptions::default());
        let e = adaptive_prespec(&cs, &CandidateLibrary::default()).unwrap();
        let sel = e.selection.unwrap();
        let chosen = sel.q_scores.iter().find(|s| s.q == sel.q).unwrap().cv_variance.unwrap();
        let none = sel.q_scores.iter().find(|s| s.q == Adjustment::None).unwrap().cv_variance.unwrap();
        assert!(chosen <= none);
        if sel.q == Adjustment::None {
            assert_eq!(sel.g, Adjustment::None);
        }
        for s in &sel.g_scores {
            assert_ne!(s.g, sel.q, "g candidates exclude the chosen Q covariate");
        }
    }
}

#[test]
fn drop_pair_examples() {
    let mut rng = common::rng(25);
    let mut cs = fuzz_communities(&mut rng, &FuzzOptions::default());
    for c in cs.iter_mut().filter(|c| c.pair_id == 7) {
        let v = if c.arm == Arm::Intervention { 0.9 } else { 0.01 };
        c.covariates.insert("baseline_prevalence".into(), v);
    }
    let lib = CandidateLibrary::default();
    let e = drop_pair_sensitivity(&cs, "baseline_prevalence", &lib).unwrap();
    assert_eq!(e.dropped_pair, Some(7));
    assert_eq!(e.df, 14);
    let kept: Vec<_> = cs.iter().filter(|c| c.pair_id != 7).cloned().collect();
    let direct = adaptive_prespec(&kept, &lib).unwrap();
    assert_eq!((e.ratio, e.log_se, e.p_value), (direct.ratio, direct.log_se, direct.p_value));
}

#[test]
fn drop_pair_tie_drops_lowest_id() {
    let mut cs = from_pairs(&[0.01, 0.02, 0.015, 0.03], &[0.02, 0.03, 0.02, 0.025]);
    for c in &mut cs {
        let v = match (c.pair_id, c.arm) {
            (2 | 4, Arm::Intervention) => 0.3,
            _ => 0.1,
        };
        c.covariates.insert("baseline_prevalence".into(), v);
    }
    let e = drop_pair_sensitivity(&cs, "baseline_prevalence", &CandidateLibrary::empty()).unwrap();
    assert_eq!(e.dropped_pair, Some(2));
    assert!(!e.warnings.is_empty());
}

#[test]
fn break_match_unadjusted_matches_community_variance() {
    let mut rng = common::rng(26);
    for _ in 0..100 {
        let cs = fuzz_communities(&mut rng, &FuzzOptions { regions: 1, ..FuzzOptions::default() });
        let e = break_match_effect(&cs, &CandidateLibrary::empty()).unwrap();
        let u = unadjusted_effect(&cs).unwrap();
        assert_eq!(e.ic_unit, IcUnit::Community);
        assert_eq!(e.df, 30);
        assert!((e.ratio - u.ratio).abs() < 1e-12);
        let (psi1, psi0, _, _) = common::unadjusted_oracle(&cs);
        let ic: Vec<f64> = cs
            .iter()
            .map(|c| match c.arm {
                Arm::Intervention => 2.0 * (c.y - psi1) / psi1,
                Arm::Control => -2.0 * (c.y - psi0) / psi0,
            })
            .collect();
        let n = ic.len() as f64;
        let m = ic.iter().sum::<f64>() / n;
        let se = (ic.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((e.log_se - se).abs() < 1e-12, "{} vs {se}", e.log_se);
    }
}

#[test]
fn break_match_offers_region() {
    let mut rng = common::rng(27);
    let cs = fuzz_communities(&mut rng, &FuzzOptions::default());
    let e = break_match_effect(&cs, &CandidateLibrary::default()).unwrap();
    let sel = e.selection.unwrap();
    assert!(sel.q_scores.iter().any(|s| s.q == Adjustment::Region));
}

fn swap_arms(cs: &[CommunityRecord]) -> Vec<CommunityRecord> {
    cs.iter()
        .cloned()
        .map(|mut c| {
            c.arm = c.arm.other();
            c
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reduction_to_unadjusted(seed in any::<u64>(), weighted in any::<bool>()) {
        let cs = fuzz_communities(&mut common::rng(seed), &FuzzOptions { random_weights: weighted, ..FuzzOptions::default() });
        let t = tmle_effect(&cs, &Adjustment::None, &Adjustment::None).unwrap();
        let u = unadjusted_effect(&cs).unwrap();
        for (a, b) in [(t.ratio, u.ratio), (t.log_se, u.log_se), (t.ci_lower, u.ci_lower), (t.ci_upper, u.ci_upper)] {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn score_equations_hold(seed in any::<u64>(), q in 0usize..3, g in 0usize..3, weighted in any::<bool>()) {
        let cs = fuzz_communities(&mut common::rng(seed), &FuzzOptions { random_weights: weighted, ..FuzzOptions::default() });
        let levels = common::region_levels(&cs);
        let fit = TmleFit::fit(&cs, &adjustment(ADJUSTMENTS[q]), &adjustment(ADJUSTMENTS[g]), &levels).unwrap();
        prop_assert!(fit.warnings.is_empty(), "{:?}", fit.warnings);
        let [s1, s0] = common::score_residuals(&cs, &fit);
        prop_assert!(s1.abs() <= 1e-8 && s0.abs() <= 1e-8, "{s1} {s0}");
    }

    #[test]
    fn arm_relabel_antisymmetry(seed in any::<u64>(), q in 0usize..3, g in 0usize..3) {
        let cs = fuzz_communities(&mut common::rng(seed), &FuzzOptions::default());
        let (qa, ga) = (adjustment(ADJUSTMENTS[q]), adjustment(ADJUSTMENTS[g]));
        let a = tmle_effect(&cs, &qa, &ga).unwrap();
        let b = tmle_effect(&swap_arms(&cs), &qa, &ga).unwrap();
        prop_assert!((a.ratio * b.ratio - 1.0).abs() <= 1e-8);
        prop_assert!((a.log_se - b.log_se).abs() <= 1e-8 * a.log_se.max(1.0));
    }

    #[test]
    fn halving_duplicates_leave_estimates_unchanged(seed in any::<u64>(), q in 0usize..3, dup in 0usize..32) {
        let cs = fuzz_communities(&mut common::rng(seed), &FuzzOptions::default());
        let mut doubled = cs.clone();
        doubled[dup].weight = 0.5;
        let mut twin = doubled[dup].clone();
        twin.id.push('b');
        doubled.push(twin);
        let levels = common::region_levels(&cs);
        let qa = adjustment(ADJUSTMENTS[q]);
        let a = TmleFit::fit(&cs, &qa, &Adjustment::None, &levels).unwrap();
        let b = TmleFit::fit(&doubled, &qa, &Adjustment::None, &levels).unwrap();
        prop_assert!((a.psi1 - b.psi1).abs() <= 1e-10 && (a.psi0 - b.psi0).abs() <= 1e-10);
    }

    #[test]
    fn ci_and_p_agree(seed in any::<u64>(), q in 0usize..3) {
        let cs = fuzz_communities(&mut common::rng(seed), &FuzzOptions::default());
        let e = tmle_effect(&cs, &adjustment(ADJUSTMENTS[q]), &Adjustment::None).unwrap();
        prop_assert!(e.ci_lower <= e.ratio && e.ratio <= e.ci_upper);
        prop_assert!((e.ratio - e.psi1 / e.psi0).abs() <= 1e-12);
        let t = t_quantile(0.975, e.df);
        prop_assert!((e.ci_lower - (e.ratio.ln() - t * e.log_se).exp()).abs() <= 1e-12);
        prop_assert!((e.ci_upper - (e.ratio.ln() + t * e.log_se).exp()).abs() <= 1e-12);
        prop_assert_eq!(e.p_value < 0.05, e.ci_upper < 1.0 || e.ci_lower > 1.0);
    }
}
