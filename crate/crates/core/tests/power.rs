use pairtrial::power::{
    curve_grid, detectable_reduction, drop_pair_tradeoff, pairs_required, GridAxis, PowerSpec,
};
use proptest::prelude::*;

/// Standard normal quantile by bisection on the erfc form of the CDF.
fn z(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * libm::erfc(-mid / std::f64::consts::SQRT_2) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn closed_form(s: &PowerSpec, pi1: f64) -> f64 {
    let zz = (z(1.0 - s.alpha / 2.0) + z(s.power)).powi(2);
    let var = (s.pi0 * (1.0 - s.pi0) + pi1 * (1.0 - pi1)) / s.m + s.km.powi(2) * (s.pi0.powi(2) + pi1.powi(2));
    2.0 + zz * var / (s.pi0 - pi1).powi(2)
}

fn spec(pairs: u32, m: f64, pi0: f64, km: f64) -> PowerSpec {
    PowerSpec {
        pairs,
        m,
        pi0,
        km,
        ..PowerSpec::default()
    }
}

#[test]
fn detectable_reductions_for_the_design() {
    for (km, expected) in [(0.4, 0.40), (0.3, 0.33), (0.2, 0.27)] {
        let r = detectable_reduction(&spec(16, 2700.0, 0.01, km)).unwrap();
        assert!((r - expected).abs() <= 0.02, "km {km}: {r}");
    }
    assert!(detectable_reduction(&spec(16, 2700.0, 0.0134, 0.4)).unwrap() <= 0.40);
}

#[test]
fn forty_percent_fits_in_sixteen_pairs() {
    let c = pairs_required(&spec(16, 2700.0, 0.01, 0.4), 0.006);
    assert!((15.0..=16.0).contains(&c), "{c}");
}

#[test]
fn requirement_diverges_as_effect_vanishes() {
    let s = spec(16, 2700.0, 0.01, 0.0);
    assert!(pairs_required(&s, 0.01 * (1.0 - 1e-6)) > 1e6);
}

#[test]
fn underpowered_design_is_an_error() {
    assert!(detectable_reduction(&spec(2, 10.0, 0.001, 2.0)).is_err());
}

#[test]
fn dropping_a_pair_is_offset_by_better_matching() {
    let (full, dropped) = drop_pair_tradeoff(&spec(16, 2700.0, 0.01, 0.40), 0.35).unwrap();
    assert!(dropped <= full + 0.01, "{full} vs {dropped}");
    let (full, same) = drop_pair_tradeoff(&spec(16, 2700.0, 0.01, 0.40), 0.40).unwrap();
    assert!(same > full);
}

#[test]
fn grid_matches_pointwise() {
    let base = spec(16, 2700.0, 0.01, 0.3);
    let axis: GridAxis = "pi0=0.005:0.02:0.0025".parse().unwrap();
    let pts = curve_grid(&base, &[axis]).unwrap();
    assert_eq!(pts.len(), 7);
    for p in &pts {
        let direct = detectable_reduction(&spec(16, 2700.0, p.pi0, 0.3)).unwrap();
        assert_eq!(p.detectable_reduction, Some(direct));
    }
    let km: GridAxis = "km=0.2:0.4:0.05".parse().unwrap();
    assert_eq!(curve_grid(&base, &[km]).unwrap().len(), 5);
}

proptest! {
    #[test]
    fn matches_closed_form(pi0 in 0.002f64..0.2, r in 0.05f64..0.9, km in 0.0f64..0.8, m in 100.0f64..10_000.0,
                           alpha in 0.01f64..0.2, power in 0.5f64..0.95) {
        let s = PowerSpec { pairs: 16, m, pi0, km, alpha, power };
        let pi1 = pi0 * (1.0 - r);
        let a = pairs_required(&s, pi1);
        let b = closed_form(&s, pi1);
        prop_assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
    }

    #[test]
    fn round_trip(pairs in 4u32..40, pi0 in 0.003f64..0.1, km in 0.0f64..0.6, m in 500.0f64..5000.0) {
        let s = spec(pairs, m, pi0, km);
        if let Ok(r) = detectable_reduction(&s) {
            prop_assert!((pairs_required(&s, pi0 * (1.0 - r)) - pairs as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn monotone(pairs in 4u32..30, pi0 in 0.005f64..0.02, km in 0.05f64..0.5, m in 500.0f64..5000.0) {
        let r = |s: PowerSpec| detectable_reduction(&s).unwrap_or(1.0);
        let base = r(spec(pairs, m, pi0, km));
        prop_assert!(r(spec(pairs + 1, m, pi0, km)) <= base);
        prop_assert!(r(spec(pairs, m * 1.2, pi0, km)) <= base);
        prop_assert!(r(spec(pairs, m, pi0, km + 0.05)) >= base);
        prop_assert!(r(spec(pairs, m, pi0 * 1.1, km)) <= base);
    }
}
