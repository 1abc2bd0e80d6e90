//! Link functions and the few distribution functions the analysis needs.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erf_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds. Fails outside the open unit interval; callers bound first.
pub fn logit(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok((p / (1.0 - p)).ln())
    } else {
        Err(Error::LogitDomain(p))
    }
}

/// `logit(clamp(p, lo, 1 − lo))`; never fails for `0 < lo < 0.5`.
pub fn bounded_logit(p: f64, lo: f64) -> f64 {
    let q = p.clamp(lo, 1.0 - lo);
    (q / (1.0 - q)).ln()
}

pub fn normal_cdf(x: f64) -> f64 {
    let tail = 0.5 * libm::erfc(x.abs() / std::f64::consts::SQRT_2);
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Inverse of [`normal_cdf`], polished with Newton steps.
pub fn normal_quantile(p: f64) -> f64 {
    let mut x = std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0);
    if x.is_finite() {
        for _ in 0..2 {
            let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            if density > 0.0 {
                x -= (normal_cdf(x) - p) / density;
            }
        }
    }
    x
}

/// Student's t distribution function.
pub fn t_cdf(x: f64, df: u32) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let nu = f64::from(df);
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn t_pdf(x: f64, df: u32) -> f64 {
    let nu = f64::from(df);
    let ln_c = ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - (nu + 1.0) / 2.0 * (x * x / nu).ln_1p()).exp()
}

/// Inverse of [`t_cdf`]: Newton steps from the normal quantile, safeguarded
/// by a bracketing interval.
pub fn t_quantile(p: f64, df: u32) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    // Work in the upper half and reflect.
    let (q, sign) = if p > 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_cdf(hi, df) < q {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return sign * f64::INFINITY;
        }
    }
    let mut x = normal_quantile(q).clamp(lo, hi);
    for _ in 0..200 {
        let f = t_cdf(x, df) - q;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = t_pdf(x, df);
        let mut next = x - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    sign * x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_basics() {
        assert_eq!(expit(0.0), 0.5);
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((expit(logit(0.3).unwrap()) - 0.3).abs() < 1e-12);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(expit(-800.0) >= 0.0 && expit(800.0) <= 1.0);
    }

    #[test]
    fn t_median_is_zero() {
        for df in [1, 2, 5, 15, 100] {
            assert_eq!(t_quantile(0.5, df), 0.0);
        }
    }

    #[test]
    fn t_cauchy_closed_form() {
        // df = 1 is Cauchy: F(x) = 1/2 + atan(x)/π
        for x in [-3.0, -0.4, 0.0, 1.2, 7.0f64] {
            let exact = 0.5 + x.atan() / std::f64::consts::PI;
            assert!((t_cdf(x, 1) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn normal_quantile_known() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
    }
}
