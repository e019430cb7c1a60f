//! Correlated Gaussian sampling for the three-covariate generator.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::{CovMatrix, RngStream};
use crate::error::{Error, Result};

/// The 3×3 equicorrelated covariance: unit variances, off-diagonal `rho`.
pub fn equicorrelated3(rho: f64) -> Result<CovMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Parameter(format!(
            "rho must lie in [0, 1) for the equicorrelated matrix, got {rho}"
        )));
    }
    let mut m = DMatrix::from_element(3, 3, rho);
    m.fill_diagonal(1.0);
    CovMatrix::from_matrix(m)
}

/// Draw `n` iid rows from N₃(0, Σ(rho)).
pub fn mvn_sample(stream: &RngStream, n: usize, rho: f64) -> Result<DMatrix<f64>> {
    mvn_sample_rng(&mut stream.rng(), n, rho)
}

/// Same as [`mvn_sample`] but drawing from an already-materialized generator,
/// for callers that interleave the covariate draws with further sampling.
pub fn mvn_sample_rng(rng: &mut ChaCha12Rng, n: usize, rho: f64) -> Result<DMatrix<f64>> {
    let sigma = equicorrelated3(rho)?;
    let l = sigma.cholesky_lower()?;
    let mut out = DMatrix::zeros(n, 3);
    for i in 0..n {
        let z: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += l[(j, k)] * z[k];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}
