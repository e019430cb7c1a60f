//! Propensity-score estimation, IPTW marginal means, effect measures, and
//! the associated variance estimators.
//!
//! The marginal proportions among treated and untreated are estimated by
//! normalized (ratio-of-sums) inverse-probability weighting:
//!
//! ```text
//! μ̂₁ = Σ YᵢZᵢ/êᵢ / Σ Zᵢ/êᵢ          μ̂₀ = Σ Yᵢ(1−Zᵢ)/(1−êᵢ) / Σ (1−Zᵢ)/(1−êᵢ)
//! ```
//!
//! Three variance estimators are provided for a contrast θ(μ̂₁, μ̂₀):
//!
//! * `var_uncorrected` treats the scores as known constants,
//! * `var_ps_corrected` subtracts the quadratic form v̂ᵀĈ_α v̂ accounting for
//!   the propensity model having been estimated,
//! * `var_mipar` evaluates the same structure after multiple imputation,
//!   replacing Ĉ_α by W − (1 + 1/M)·B so that within-imputation information
//!   reduces the variance while between-imputation noise adds to it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numstat::{expit, fit_logistic, CovMatrix};

/// Scores this close to 0 or 1 trigger an extreme-weight warning.
pub const EXTREME_SCORE_EPS: f64 = 1e-12;

/// Normal 97.5% quantile used for all confidence intervals.
pub const Z_975: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMeasure {
    LogRr,
    LogOr,
    Rd,
}

impl EffectMeasure {
    pub const ALL: [EffectMeasure; 3] = [
        EffectMeasure::LogRr,
        EffectMeasure::LogOr,
        EffectMeasure::Rd,
    ];

    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            EffectMeasure::LogRr => "RR",
            EffectMeasure::LogOr => "OR",
            EffectMeasure::Rd => "RD",
        }
    }
}

impl std::fmt::Display for EffectMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectMeasure::LogRr => write!(f, "log(RR)"),
            EffectMeasure::LogOr => write!(f, "log(OR)"),
            EffectMeasure::Rd => write!(f, "RD"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFlavor {
    Uncorrected,
    PsCorrected,
    PsPlusMi,
}

impl VarianceFlavor {
    pub fn label(&self) -> &'static str {
        match self {
            VarianceFlavor::Uncorrected => "uncorrected",
            VarianceFlavor::PsCorrected => "ps_corrected",
            VarianceFlavor::PsPlusMi => "ps_plus_mi",
        }
    }
}

/// A fitted propensity model: coefficients, their covariance and the
/// per-individual scores expit(xᵢᵀα̂).
#[derive(Debug, Clone)]
pub struct FittedPs {
    pub alpha: DVector<f64>,
    pub alpha_cov: CovMatrix,
    pub scores: Vec<f64>,
}

/// IPTW marginal means with an extreme-weight diagnostic count.
#[derive(Debug, Clone, Copy)]
pub struct MarginalMeans {
    pub mu1: f64,
    pub mu0: f64,
    /// Number of scores within `EXTREME_SCORE_EPS` of the unit interval
    /// boundary; weights from such scores are numerically unstable.
    pub extreme_weights: usize,
}

/// A variance value plus a flag marking that a negative corrected value was
/// clamped to zero.
#[derive(Debug, Clone, Copy)]
pub struct VarianceEstimate {
    pub value: f64,
    pub clamped: bool,
}

/// Point estimate, variance and 95% CI for one effect measure.
#[derive(Debug, Clone, Serialize)]
pub struct EffectEstimate {
    pub measure: EffectMeasure,
    pub estimate: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub variance_flavor: VarianceFlavor,
    /// Diagnostics attached to this estimate (clamped variance, extreme weights).
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    pub fn new(
        measure: EffectMeasure,
        mu1: f64,
        mu0: f64,
        variance: VarianceEstimate,
        flavor: VarianceFlavor,
        extreme_weights: usize,
    ) -> Result<Self> {
        let estimate = effect(mu1, mu0, measure)?;
        let half = Z_975 * variance.value.sqrt();
        let mut warnings = Vec::new();
        if variance.clamped {
            warnings.push("corrected variance was negative and clamped to 0".to_string());
        }
        if extreme_weights > 0 {
            warnings.push(format!("{extreme_weights} scores gave extreme weights"));
        }
        Ok(EffectEstimate {
            measure,
            estimate,
            variance: variance.value,
            ci_low: estimate - half,
            ci_high: estimate + half,
            mu1,
            mu0,
            variance_flavor: flavor,
            warnings,
        })
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// Fit the propensity model by maximum likelihood. `design` must contain the
/// intercept column; `treatment` is the 0/1 indicator.
pub fn estimate_ps(design: &DMatrix<f64>, treatment: &[f64]) -> Result<FittedPs> {
    let n1 = treatment.iter().filter(|&&z| z == 1.0).count();
    if n1 == 0 || n1 == treatment.len() {
        return Err(Error::Estimation(
            "both treatment arms must be non-empty".into(),
        ));
    }
    let fit = fit_logistic(design, treatment)?;
    if !fit.converged {
        return Err(Error::Estimation(format!(
            "propensity fit did not converge in {} iterations",
            fit.iterations
        )));
    }
    let eta = design * &fit.coefficients;
    let scores = eta.iter().map(|&e| expit(e)).collect();
    Ok(FittedPs {
        alpha: fit.coefficients,
        alpha_cov: fit.covariance,
        scores,
    })
}

fn check_iptw_inputs(y: &[f64], z: &[f64], scores: &[f64]) -> Result<()> {
    if y.len() != z.len() || y.len() != scores.len() {
        return Err(Error::Parameter(format!(
            "length mismatch: y={}, z={}, scores={}",
            y.len(),
            z.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Parameter(
            "scores must lie strictly inside (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Ratio-of-sums IPTW estimates of the marginal outcome proportions.
pub fn iptw_means(y: &[f64], z: &[f64], scores: &[f64]) -> Result<MarginalMeans> {
    check_iptw_inputs(y, z, scores)?;
    let mut num1 = 0.0;
    let mut den1 = 0.0;
    let mut num0 = 0.0;
    let mut den0 = 0.0;
    let mut extreme = 0usize;
    let mut n1 = 0usize;
    for i in 0..y.len() {
        let e = scores[i];
        if !(EXTREME_SCORE_EPS..=1.0 - EXTREME_SCORE_EPS).contains(&e) {
            extreme += 1;
        }
        if z[i] == 1.0 {
            n1 += 1;
            num1 += y[i] / e;
            den1 += 1.0 / e;
        } else {
            num0 += y[i] / (1.0 - e);
            den0 += 1.0 / (1.0 - e);
        }
    }
    if n1 == 0 || n1 == y.len() {
        return Err(Error::Estimation(
            "both treatment arms must be non-empty".into(),
        ));
    }
    Ok(MarginalMeans {
        mu1: num1 / den1,
        mu0: num0 / den0,
        extreme_weights: extreme,
    })
}

/// The contrast on the estimation scale: log(μ₁/μ₀), log odds ratio, or μ₁−μ₀.
pub fn effect(mu1: f64, mu0: f64, measure: EffectMeasure) -> Result<f64> {
    match measure {
        EffectMeasure::Rd => Ok(mu1 - mu0),
        EffectMeasure::LogRr => {
            if mu1 <= 0.0 || mu0 <= 0.0 {
                return Err(Error::Estimation(format!(
                    "log relative risk undefined for mu1={mu1}, mu0={mu0}"
                )));
            }
            Ok((mu1 / mu0).ln())
        }
        EffectMeasure::LogOr => {
            if !(mu1 > 0.0 && mu1 < 1.0 && mu0 > 0.0 && mu0 < 1.0) {
                return Err(Error::Estimation(format!(
                    "log odds ratio undefined for mu1={mu1}, mu0={mu0}"
                )));
            }
            Ok((mu1 / (1.0 - mu1)).ln() - (mu0 / (1.0 - mu0)).ln())
        }
    }
}

/// Delta-method factors (K₁, K₀) mapping mean-scale variation onto the
/// estimation scale: (1, 1) for RD, (1/μ₁, 1/μ₀) for log RR, and
/// ({μ₁(1−μ₁)}⁻¹, {μ₀(1−μ₀)}⁻¹) for log OR.
pub fn k_factors(mu1: f64, mu0: f64, measure: EffectMeasure) -> Result<(f64, f64)> {
    match measure {
        EffectMeasure::Rd => Ok((1.0, 1.0)),
        EffectMeasure::LogRr => {
            if mu1 <= 0.0 || mu0 <= 0.0 {
                return Err(Error::Estimation(
                    "K factors undefined at boundary means".into(),
                ));
            }
            Ok((1.0 / mu1, 1.0 / mu0))
        }
        EffectMeasure::LogOr => {
            if !(mu1 > 0.0 && mu1 < 1.0 && mu0 > 0.0 && mu0 < 1.0) {
                return Err(Error::Estimation(
                    "K factors undefined at boundary means".into(),
                ));
            }
            Ok((1.0 / (mu1 * (1.0 - mu1)), 1.0 / (mu0 * (1.0 - mu0))))
        }
    }
}

/// Variance of the contrast treating the scores as known:
///
/// ```text
/// V̂_un = K₁²/(nŵ₁)² Σ (Yᵢ−μ̂₁)²Zᵢ/êᵢ²  +  K₀²/(nŵ₀)² Σ (Yᵢ−μ̂₀)²(1−Zᵢ)/(1−êᵢ)²
/// ```
///
/// with nŵ₁ = Σ Zᵢ/êᵢ and nŵ₀ = Σ (1−Zᵢ)/(1−êᵢ) the total weights per arm.
pub fn var_uncorrected(
    y: &[f64],
    z: &[f64],
    scores: &[f64],
    mu1: f64,
    mu0: f64,
    measure: EffectMeasure,
) -> Result<f64> {
    check_iptw_inputs(y, z, scores)?;
    let (k1, k0) = k_factors(mu1, mu0, measure)?;
    let mut sw1 = 0.0;
    let mut sw0 = 0.0;
    let mut s1 = 0.0;
    let mut s0 = 0.0;
    for i in 0..y.len() {
        let e = scores[i];
        if z[i] == 1.0 {
            sw1 += 1.0 / e;
            s1 += (y[i] - mu1).powi(2) / (e * e);
        } else {
            sw0 += 1.0 / (1.0 - e);
            s0 += (y[i] - mu0).powi(2) / ((1.0 - e) * (1.0 - e));
        }
    }
    if sw1 == 0.0 || sw0 == 0.0 {
        return Err(Error::Estimation(
            "both treatment arms must be non-empty".into(),
        ));
    }
    Ok(k1 * k1 * s1 / (sw1 * sw1) + k0 * k0 * s0 / (sw0 * sw0))
}

/// The gradient v̂ of the contrast with respect to the propensity
/// coefficients, evaluated at the rows of `design`:
///
/// ```text
/// v̂ = K₁/(nŵ₁) Σ xᵢ(Yᵢ−μ̂₁)Zᵢ(1−êᵢ)/êᵢ + K₀/(nŵ₀) Σ xᵢ(Yᵢ−μ̂₀)(1−Zᵢ)êᵢ/(1−êᵢ)
/// ```
fn correction_vector(
    design: &DMatrix<f64>,
    y: &[f64],
    z: &[f64],
    scores: &[f64],
    mu1: f64,
    mu0: f64,
    measure: EffectMeasure,
) -> Result<DVector<f64>> {
    if design.nrows() != y.len() {
        return Err(Error::Parameter(format!(
            "design has {} rows but outcome has {}",
            design.nrows(),
            y.len()
        )));
    }
    let (k1, k0) = k_factors(mu1, mu0, measure)?;
    let p = design.ncols();
    let mut sw1 = 0.0;
    let mut sw0 = 0.0;
    let mut v1 = DVector::zeros(p);
    let mut v0 = DVector::zeros(p);
    for i in 0..y.len() {
        let e = scores[i];
        if z[i] == 1.0 {
            sw1 += 1.0 / e;
            let c = (y[i] - mu1) * (1.0 - e) / e;
            for j in 0..p {
                v1[j] += design[(i, j)] * c;
            }
        } else {
            sw0 += 1.0 / (1.0 - e);
            let c = (y[i] - mu0) * e / (1.0 - e);
            for j in 0..p {
                v0[j] += design[(i, j)] * c;
            }
        }
    }
    Ok(v1 * (k1 / sw1) + v0 * (k0 / sw0))
}

fn clamp_variance(v: f64) -> VarianceEstimate {
    if v < 0.0 {
        VarianceEstimate {
            value: 0.0,
            clamped: true,
        }
    } else {
        VarianceEstimate {
            value: v,
            clamped: false,
        }
    }
}

/// Variance corrected for propensity estimation: V̂_PS = V̂_un − v̂ᵀĈ_α v̂.
/// Negative values (possible in small samples) clamp to zero with a flag.
#[allow(clippy::too_many_arguments)]
pub fn var_ps_corrected(
    y: &[f64],
    z: &[f64],
    design: &DMatrix<f64>,
    scores: &[f64],
    alpha_cov: &CovMatrix,
    mu1: f64,
    mu0: f64,
    measure: EffectMeasure,
) -> Result<VarianceEstimate> {
    if alpha_cov.dim() != design.ncols() {
        return Err(Error::Parameter(format!(
            "alpha covariance is {}x{} but design has {} columns",
            alpha_cov.dim(),
            alpha_cov.dim(),
            design.ncols()
        )));
    }
    let v_un = var_uncorrected(y, z, scores, mu1, mu0, measure)?;
    let v = correction_vector(design, y, z, scores, mu1, mu0, measure)?;
    Ok(clamp_variance(v_un - alpha_cov.quad_form(&v)))
}

/// Variance for a pooled-parameter analysis after M imputations:
/// V̂ = V̂_un − v̂ᵀ{W − (1 + 1/M)·B}v̂, evaluated at the averaged covariates
/// and pooled scores supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn var_mipar(
    y: &[f64],
    z: &[f64],
    design: &DMatrix<f64>,
    scores: &[f64],
    within: &CovMatrix,
    between: &CovMatrix,
    m: usize,
    mu1: f64,
    mu0: f64,
    measure: EffectMeasure,
) -> Result<VarianceEstimate> {
    if m < 2 {
        return Err(Error::Parameter(
            "pooled variance needs M >= 2 imputations".into(),
        ));
    }
    if within.dim() != design.ncols() || between.dim() != design.ncols() {
        return Err(Error::Parameter(format!(
            "W ({}) and B ({}) must match design columns ({})",
            within.dim(),
            between.dim(),
            design.ncols()
        )));
    }
    let v_un = var_uncorrected(y, z, scores, mu1, mu0, measure)?;
    let v = correction_vector(design, y, z, scores, mu1, mu0, measure)?;
    let inflate = 1.0 + 1.0 / m as f64;
    let correction = within.quad_form(&v) - inflate * between.quad_form(&v);
    Ok(clamp_variance(v_un - correction))
}
