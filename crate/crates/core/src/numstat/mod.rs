//! Numerical foundation: seeded random streams, correlated Gaussian sampling,
//! and generalized-linear-model fitting with coefficient covariance and
//! posterior draws.

mod glm;
mod mvn;
mod rng;

pub use glm::{
    fit_linear, fit_linear_bayes_draw, fit_logistic, logistic_posterior_draw, CovMatrix, GlmFit,
    SEPARATION_BOUND,
};
pub use mvn::{equicorrelated3, mvn_sample, mvn_sample_rng};
pub use rng::RngStream;

/// Logistic function, numerically stable on both tails.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
