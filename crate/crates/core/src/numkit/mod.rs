//! Numerical kernels shared by the estimators and the simulator.

pub mod dist;
pub mod glm;
pub mod linalg;
pub mod rng;

pub use dist::{bounded_logit, expit, logit, normal_cdf, normal_quantile, t_cdf, t_pdf, t_quantile};
pub use glm::{fit_logistic, GlmFit, IrlsOptions};
pub use linalg::Matrix;
pub use rng::{mix_seed, mvn_sample, splitmix64, MvnSampler, RngStream};

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n − 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}
