//! Maximum-likelihood fitting for the binomial and Gaussian families, plus
//! the posterior draws needed for proper imputation.
//!
//! Logistic models are fit by iteratively reweighted least squares with
//! step-halving whenever a full step would decrease the log-likelihood.
//! Convergence is declared on the maximum absolute score; a coefficient
//! walking past `SEPARATION_BOUND` on the logit scale is treated as complete
//! separation rather than silent divergence.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::expit;
use crate::error::{Error, Result};

/// |coefficient| beyond which a logistic fit is declared separated; logit 15
/// corresponds to probabilities within 3e-7 of the boundary.
pub const SEPARATION_BOUND: f64 = 15.0;

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;

/// Symmetric positive semi-definite matrix (a covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    mat: DMatrix<f64>,
}

impl CovMatrix {
    /// Wrap a square matrix, enforcing symmetry. Tiny asymmetries from
    /// accumulated floating error are averaged away; anything larger is an
    /// error.
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Parameter(format!(
                "covariance must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let scale = mat.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..mat.nrows() {
            for j in (i + 1)..mat.ncols() {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-8 * scale {
                    return Err(Error::Parameter(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        Ok(CovMatrix { mat: sym })
    }

    pub fn zeros(dim: usize) -> Self {
        CovMatrix {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// vᵀ Σ v
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.mat * v)[(0, 0)]
    }

    /// Lower Cholesky factor. If the matrix is only semi-definite (or very
    /// mildly indefinite from floating error), a small diagonal jitter is
    /// added, escalating over a short ladder before giving up.
    pub fn cholesky_lower(&self) -> Result<DMatrix<f64>> {
        if self.mat.iter().all(|x| *x == 0.0) {
            return Ok(DMatrix::zeros(self.dim(), self.dim()));
        }
        if let Some(ch) = Cholesky::new(self.mat.clone()) {
            return Ok(ch.l());
        }
        let scale = (self.mat.diagonal().amax()).max(1e-300);
        for exp in [-12, -10, -8, -6] {
            let jitter = scale * 10f64.powi(exp);
            let repaired = &self.mat + DMatrix::identity(self.dim(), self.dim()) * jitter;
            if let Some(ch) = Cholesky::new(repaired) {
                return Ok(ch.l());
            }
        }
        Err(Error::Parameter(
            "covariance is not positive semi-definite (Cholesky failed after jitter repair)".into(),
        ))
    }
}

/// A fitted generalized linear model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Intercept first, then one coefficient per design column.
    pub coefficients: DVector<f64>,
    /// Inverse observed Fisher information at the estimate.
    pub covariance: CovMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Residual variance; `None` for the binomial family.
    pub dispersion: Option<f64>,
    /// Log-likelihood after each accepted IRLS step (read by tests).
    #[allow(dead_code)]
    pub(crate) ll_trace: Vec<f64>,
}

fn check_design(design: &DMatrix<f64>, response: &[f64]) -> Result<()> {
    if design.nrows() != response.len() {
        return Err(Error::Parameter(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            response.len()
        )));
    }
    if design.ncols() == 0 || design.nrows() < design.ncols() {
        return Err(Error::Parameter(format!(
            "need at least as many rows as columns ({} rows, {} columns)",
            design.nrows(),
            design.ncols()
        )));
    }
    if design.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("design contains non-finite values".into()));
    }
    Ok(())
}

fn bernoulli_loglik(design: &DMatrix<f64>, response: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    let mut ll = 0.0;
    for (i, &y) in response.iter().enumerate() {
        let e = eta[i];
        // log(1 + exp(e)) evaluated stably
        let log1pe = if e > 0.0 {
            e + (-e).exp().ln_1p()
        } else {
            e.exp().ln_1p()
        };
        ll += y * e - log1pe;
    }
    ll
}

/// Maximum-likelihood logistic regression via IRLS.
///
/// Non-convergence after the iteration cap yields a flagged fit
/// (`converged = false`); complete separation and rank deficiency are errors.
pub fn fit_logistic(design: &DMatrix<f64>, response: &[f64]) -> Result<GlmFit> {
    check_design(design, response)?;
    if response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Parameter("logistic response must be 0/1".into()));
    }

    let n = design.nrows();
    let p = design.ncols();
    let mut beta = DVector::zeros(p);
    let mut ll = bernoulli_loglik(design, response, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(p, p);

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let eta = design * &beta;
        let mut score = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..n {
            let mu = expit(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let resid = response[i] - mu;
            for a in 0..p {
                let xa = design[(i, a)];
                score[a] += xa * resid;
                for b in a..p {
                    info[(a, b)] += xa * design[(i, b)] * w;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }

        if score.amax() < SCORE_TOL {
            converged = true;
            break;
        }

        let chol = Cholesky::new(info.clone()).ok_or_else(|| {
            Error::Parameter("design is rank deficient (information matrix singular)".into())
        })?;
        let full_step = chol.solve(&score);

        // step-halving keeps the log-likelihood non-decreasing
        let mut step = full_step;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step;
            let cand_ll = bernoulli_loglik(design, response, &candidate);
            if cand_ll >= ll - 1e-12 {
                beta = candidate;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // stalled on a flat/noisy likelihood: report as non-converged
        }
        if beta.amax() > SEPARATION_BOUND {
            return Err(Error::Separation {
                bound: SEPARATION_BOUND,
            });
        }
    }

    // covariance from the information at the final estimate
    let eta = design * &beta;
    info.fill(0.0);
    for i in 0..n {
        let mu = expit(eta[i]);
        let w = (mu * (1.0 - mu)).max(1e-10);
        for a in 0..p {
            for b in a..p {
                info[(a, b)] += design[(i, a)] * design[(i, b)] * w;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    let cov = Cholesky::new(info).map(|ch| ch.inverse()).ok_or_else(|| {
        Error::Parameter("design is rank deficient (information matrix singular)".into())
    })?;

    Ok(GlmFit {
        coefficients: beta,
        covariance: CovMatrix::from_matrix(cov)?,
        converged,
        iterations,
        dispersion: None,
        ll_trace: trace,
    })
}

/// Ordinary least squares with the usual unbiased residual variance.
pub fn fit_linear(design: &DMatrix<f64>, response: &[f64]) -> Result<GlmFit> {
    check_design(design, response)?;
    let n = design.nrows();
    let p = design.ncols();
    if n <= p {
        return Err(Error::Parameter(format!(
            "linear fit needs n > p ({n} rows, {p} columns)"
        )));
    }
    let y = DVector::from_column_slice(response);
    let xtx = design.transpose() * design;
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::Parameter("design is rank deficient (XᵀX singular)".into()))?;
    let beta = chol.solve(&(design.transpose() * &y));
    let resid = &y - design * &beta;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let sigma2 = rss / (n - p) as f64;
    let cov = chol.inverse() * sigma2;
    Ok(GlmFit {
        coefficients: beta,
        covariance: CovMatrix::from_matrix(cov)?,
        converged: true,
        iterations: 1,
        dispersion: Some(sigma2),
        ll_trace: Vec::new(),
    })
}

/// One draw from the posterior of a normal linear model under the standard
/// non-informative prior: σ² from its scaled inverse-chi-square conditional,
/// then coefficients from N(β̂, σ²(XᵀX)⁻¹).
pub fn fit_linear_bayes_draw(
    design: &DMatrix<f64>,
    response: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<(DVector<f64>, f64)> {
    check_design(design, response)?;
    let n = design.nrows();
    let p = design.ncols();
    if n <= p {
        return Err(Error::Parameter(format!(
            "posterior draw needs n > p ({n} rows, {p} columns)"
        )));
    }
    let y = DVector::from_column_slice(response);
    let xtx = design.transpose() * design;
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::Parameter("design is rank deficient (XᵀX singular)".into()))?;
    let beta_hat = chol.solve(&(design.transpose() * &y));
    let resid = &y - design * &beta_hat;
    let rss: f64 = resid.iter().map(|r| r * r).sum();

    let df = (n - p) as f64;
    let chi: f64 = ChiSquared::new(df)
        .map_err(|e| Error::Parameter(format!("invalid chi-square dof: {e}")))?
        .sample(rng);
    let sigma2 = if rss > 0.0 { rss / chi } else { 0.0 };
    let sigma = sigma2.sqrt();

    let xtx_inv_l = CovMatrix::from_matrix(chol.inverse())?.cholesky_lower()?;
    let std_draw = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta_draw = &beta_hat + xtx_inv_l * std_draw * sigma;
    Ok((beta_draw, sigma))
}

/// Approximate posterior draw for logistic coefficients: N(α̂, Ĉ).
pub fn logistic_posterior_draw(fit: &GlmFit, rng: &mut ChaCha12Rng) -> Result<DVector<f64>> {
    if !fit.converged {
        return Err(Error::Estimation(
            "posterior draw requires a converged logistic fit".into(),
        ));
    }
    let l = fit.covariance.cholesky_lower()?;
    let std_draw = DVector::from_fn(fit.coefficients.len(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    Ok(&fit.coefficients + l * std_draw)
}
