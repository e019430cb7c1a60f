//! The missing-confounder strategies: complete-case analysis, the
//! missingness-pattern generalized propensity score, and three ways of
//! combining multiply imputed datasets.
//!
//! * `MIte` fits a propensity model and estimates the effect within each
//!   imputed dataset, then pools the effect estimates with the usual
//!   within-plus-between rule.
//! * `MIps` averages each individual's score across imputations and runs a
//!   single weighted analysis on the averaged scores.
//! * `MIpar` averages the propensity coefficients and each individual's
//!   imputed covariates, scoring everyone at expit(x̄ᵀα̅).
//!
//! The pooled-score and pooled-parameter variances use the imputation-aware
//! estimator in [`crate::iptw::var_mipar`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iptw::{
    self, effect, estimate_ps, EffectEstimate, EffectMeasure, FittedPs, VarianceEstimate,
    VarianceFlavor, Z_975,
};
use crate::mice::{impute, Dataset, ImputationConfig, ImputationSet};
use crate::numstat::{expit, CovMatrix};

/// Default minimum number of complete rows for a complete-case analysis.
pub const DEFAULT_MIN_COMPLETE: usize = 50;
/// Default minimum stratum size for the missingness-pattern approach.
pub const DEFAULT_MIN_STRATUM: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Crude,
    Full,
    Cc,
    Mp,
    Mite,
    Mips,
    Mipar,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Crude,
        Strategy::Full,
        Strategy::Cc,
        Strategy::Mp,
        Strategy::Mite,
        Strategy::Mips,
        Strategy::Mipar,
    ];

    /// Column label used in emitted tables.
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Crude => "Crude",
            Strategy::Full => "Full",
            Strategy::Cc => "CC",
            Strategy::Mp => "MP",
            Strategy::Mite => "MIte",
            Strategy::Mips => "MIps",
            Strategy::Mipar => "MIpar",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s.to_ascii_lowercase().as_str() {
            "crude" => Ok(Strategy::Crude),
            "full" => Ok(Strategy::Full),
            "cc" => Ok(Strategy::Cc),
            "mp" => Ok(Strategy::Mp),
            "mite" => Ok(Strategy::Mite),
            "mips" => Ok(Strategy::Mips),
            "mipar" => Ok(Strategy::Mipar),
            other => Err(Error::Input(format!(
                "unknown strategy '{other}' (expected crude, full, cc, mp, mite, mips or mipar)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-imputation detail retained by the pooled-effect strategy.
#[derive(Debug, Clone)]
pub struct PerImputationRecord {
    /// One (estimate, variance) pair per entry of `EffectMeasure::ALL`.
    pub estimates: Vec<(f64, f64)>,
}

/// The output of one strategy on one dataset.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// One estimate per entry of `EffectMeasure::ALL`.
    pub estimates: Vec<EffectEstimate>,
    /// Rows that entered the analysis; `None` means all rows.
    pub rows_used: Option<Vec<usize>>,
    pub n_used: usize,
    /// Scores aligned with `rows_used` (or all rows). Crude analyses carry
    /// the constant pseudo-score 1/2.
    pub scores: Vec<f64>,
    /// Per-imputation effect detail (pooled-effect strategy only).
    pub per_imputation: Option<Vec<PerImputationRecord>>,
}

impl StrategyResult {
    pub fn estimate(&self, measure: EffectMeasure) -> &EffectEstimate {
        let idx = EffectMeasure::ALL
            .iter()
            .position(|&m| m == measure)
            .unwrap();
        &self.estimates[idx]
    }
}

/// Everything produced by one imputation pass: the completed datasets, the
/// per-imputation propensity fits, and the three pooled analyses.
#[derive(Debug, Clone)]
pub struct MiAnalysis {
    pub imputations: ImputationSet,
    pub per_fit: Vec<FittedPs>,
    pub mite: StrategyResult,
    /// `Err(reason)` when pooling scores is not applicable (imputed outcome
    /// or treatment).
    pub mips: std::result::Result<StrategyResult, String>,
    pub mipar: std::result::Result<StrategyResult, String>,
    /// Intercept-plus-averaged-covariates design (averages taken cellwise
    /// across imputations; binary covariates stay fractional).
    pub avg_design: DMatrix<f64>,
}

fn require_observed_yz(dataset: &Dataset, strategy: &'static str) -> Result<()> {
    if !dataset.y.fully_observed() || !dataset.z.fully_observed() {
        return Err(Error::StrategyFailure {
            strategy,
            reason: "requires fully observed outcome and treatment".into(),
        });
    }
    Ok(())
}

fn estimates_for_all_measures<F>(
    mu1: f64,
    mu0: f64,
    extreme: usize,
    mut variance: F,
) -> Result<Vec<EffectEstimate>>
where
    F: FnMut(EffectMeasure) -> Result<(VarianceEstimate, VarianceFlavor)>,
{
    EffectMeasure::ALL
        .iter()
        .map(|&measure| {
            let (var, flavor) = variance(measure)?;
            EffectEstimate::new(measure, mu1, mu0, var, flavor, extreme)
        })
        .collect()
}

/// Unweighted contrast of arm means: the confounded "crude" reference.
/// Computed on rows with observed outcome and treatment.
pub fn analyze_crude(dataset: &Dataset) -> Result<StrategyResult> {
    let rows: Vec<usize> = (0..dataset.n())
        .filter(|&i| !dataset.y.is_missing(i) && !dataset.z.is_missing(i))
        .collect();
    if rows.is_empty() {
        return Err(Error::StrategyFailure {
            strategy: "Crude",
            reason: "no rows with observed outcome and treatment".into(),
        });
    }
    let y: Vec<f64> = rows.iter().map(|&i| dataset.y.values()[i]).collect();
    let z: Vec<f64> = rows.iter().map(|&i| dataset.z.values()[i]).collect();
    let scores = vec![0.5; rows.len()];
    let mm = iptw::iptw_means(&y, &z, &scores)?;
    let estimates = estimates_for_all_measures(mm.mu1, mm.mu0, 0, |measure| {
        let v = iptw::var_uncorrected(&y, &z, &scores, mm.mu1, mm.mu0, measure)?;
        Ok((
            VarianceEstimate {
                value: v,
                clamped: false,
            },
            VarianceFlavor::Uncorrected,
        ))
    })?;
    let n_used = rows.len();
    let all = n_used == dataset.n();
    Ok(StrategyResult {
        strategy: Strategy::Crude,
        estimates,
        rows_used: if all { None } else { Some(rows) },
        n_used,
        scores,
        per_imputation: None,
    })
}

fn weighted_pipeline(
    strategy: Strategy,
    dataset: &Dataset,
    rows: Option<Vec<usize>>,
) -> Result<StrategyResult> {
    let idx: Vec<usize> = match &rows {
        Some(r) => r.clone(),
        None => (0..dataset.n()).collect(),
    };
    let design = dataset.design_matrix(Some(&idx))?;
    let y: Vec<f64> = idx.iter().map(|&i| dataset.y.values()[i]).collect();
    let z: Vec<f64> = idx.iter().map(|&i| dataset.z.values()[i]).collect();
    let ps = estimate_ps(&design, &z)?;
    let mm = iptw::iptw_means(&y, &z, &ps.scores)?;
    let estimates = estimates_for_all_measures(mm.mu1, mm.mu0, mm.extreme_weights, |measure| {
        let v = iptw::var_ps_corrected(
            &y,
            &z,
            &design,
            &ps.scores,
            &ps.alpha_cov,
            mm.mu1,
            mm.mu0,
            measure,
        )?;
        Ok((v, VarianceFlavor::PsCorrected))
    })?;
    Ok(StrategyResult {
        strategy,
        estimates,
        n_used: idx.len(),
        rows_used: rows,
        scores: ps.scores,
        per_imputation: None,
    })
}

/// IPTW on complete data; in the simulation harness this runs on the
/// pre-deletion dataset.
pub fn analyze_full(dataset: &Dataset) -> Result<StrategyResult> {
    if !dataset.fully_observed() {
        return Err(Error::StrategyFailure {
            strategy: "Full",
            reason: "full-data analysis needs a dataset with no missing cells".into(),
        });
    }
    weighted_pipeline(Strategy::Full, dataset, None)
}

/// Complete-case analysis: restrict to rows with every modeled variable
/// observed, then run the standard weighted pipeline on the subsample.
pub fn analyze_cc(dataset: &Dataset, min_complete: usize) -> Result<StrategyResult> {
    let rows = dataset.complete_rows();
    if rows.len() < min_complete {
        return Err(Error::StrategyFailure {
            strategy: "CC",
            reason: format!("only {} complete rows (minimum {min_complete})", rows.len()),
        });
    }
    let all = rows.len() == dataset.n();
    weighted_pipeline(Strategy::Cc, dataset, if all { None } else { Some(rows) })
}

#[derive(Debug, Clone)]
struct Stratum {
    /// Covariate indexes missing somewhere in this (possibly merged) stratum.
    missing: Vec<bool>,
    rows: Vec<usize>,
}

/// Group rows by covariate missingness pattern and merge strata smaller than
/// `min_stratum`. A sparse stratum merges into the nearest pattern whose
/// missing set contains its own; if none exists, into the stratum minimizing
/// the size of the combined missing set (largest stratum on ties).
fn build_strata(dataset: &Dataset, min_stratum: usize) -> Result<Vec<Stratum>> {
    let p = dataset.covariates.len();
    let mut strata: Vec<Stratum> = Vec::new();
    for i in 0..dataset.n() {
        let mask: Vec<bool> = dataset.covariates.iter().map(|c| c.is_missing(i)).collect();
        match strata.iter_mut().find(|s| s.missing == mask) {
            Some(s) => s.rows.push(i),
            None => strata.push(Stratum {
                missing: mask,
                rows: vec![i],
            }),
        }
    }

    while let Some(small) = strata
        .iter()
        .enumerate()
        .filter(|(_, s)| s.rows.len() < min_stratum)
        .min_by_key(|(_, s)| s.rows.len())
        .map(|(i, _)| i)
    {
        if strata.len() == 1 {
            return Err(Error::StrategyFailure {
                strategy: "MP",
                reason: format!(
                    "only {} rows in total (minimum stratum size {min_stratum})",
                    strata[0].rows.len()
                ),
            });
        }
        let donor_missing = strata[small].missing.clone();
        let superset = strata
            .iter()
            .enumerate()
            .filter(|(i, s)| *i != small && (0..p).all(|j| !donor_missing[j] || s.missing[j]))
            .min_by_key(|(_, s)| s.missing.iter().filter(|&&m| m).count());
        let target = match superset {
            Some((i, _)) => i,
            None => strata
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != small)
                .min_by_key(|(_, s)| {
                    let union = (0..p).filter(|&j| s.missing[j] || donor_missing[j]).count();
                    (union, usize::MAX - s.rows.len())
                })
                .map(|(i, _)| i)
                .unwrap(),
        };
        let donor = strata.remove(small);
        let target = if target > small { target - 1 } else { target };
        let merged = &mut strata[target];
        for j in 0..p {
            merged.missing[j] = merged.missing[j] || donor.missing[j];
        }
        merged.rows.extend(donor.rows);
        merged.rows.sort_unstable();
    }
    Ok(strata)
}

/// Missingness-pattern analysis: a separate propensity model per stratum on
/// the covariates observed throughout that stratum, concatenated into one
/// generalized score and a single weighted estimate. The variance does not
/// correct for score estimation.
pub fn analyze_mp(dataset: &Dataset, min_stratum: usize) -> Result<StrategyResult> {
    require_observed_yz(dataset, "MP")?;
    let strata = build_strata(dataset, min_stratum)?;
    let n = dataset.n();
    let mut scores = vec![f64::NAN; n];
    for stratum in &strata {
        let z: Vec<f64> = stratum
            .rows
            .iter()
            .map(|&i| dataset.z.values()[i])
            .collect();
        let n1 = z.iter().filter(|&&v| v == 1.0).count();
        if n1 == 0 || n1 == z.len() {
            return Err(Error::StrategyFailure {
                strategy: "MP",
                reason: "a missingness stratum has a single treatment arm".into(),
            });
        }
        let used: Vec<usize> = (0..dataset.covariates.len())
            .filter(|&j| !stratum.missing[j])
            .collect();
        let mut design = DMatrix::zeros(stratum.rows.len(), used.len() + 1);
        for (r, &i) in stratum.rows.iter().enumerate() {
            design[(r, 0)] = 1.0;
            for (c, &j) in used.iter().enumerate() {
                design[(r, c + 1)] = dataset.covariates[j].values()[i];
            }
        }
        let ps = estimate_ps(&design, &z).map_err(|e| Error::StrategyFailure {
            strategy: "MP",
            reason: format!("stratum fit failed: {e}"),
        })?;
        for (r, &i) in stratum.rows.iter().enumerate() {
            scores[i] = ps.scores[r];
        }
    }
    let y = dataset.y.values();
    let z = dataset.z.values();
    let mm = iptw::iptw_means(y, z, &scores)?;
    let estimates = estimates_for_all_measures(mm.mu1, mm.mu0, mm.extreme_weights, |measure| {
        let v = iptw::var_uncorrected(y, z, &scores, mm.mu1, mm.mu0, measure)?;
        Ok((
            VarianceEstimate {
                value: v,
                clamped: false,
            },
            VarianceFlavor::Uncorrected,
        ))
    })?;
    Ok(StrategyResult {
        strategy: Strategy::Mp,
        estimates,
        n_used: n,
        rows_used: None,
        scores,
        per_imputation: None,
    })
}

/// Rubin pooling of scalar estimates: mean, within, between (divisor M−1)
/// and total variance W̄ + (1 + 1/M)B.
pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<(f64, f64)> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(Error::Parameter(
            "pooling needs M >= 2 matching estimates/variances".into(),
        ));
    }
    let mf = m as f64;
    let mean = estimates.iter().sum::<f64>() / mf;
    let w = variances.iter().sum::<f64>() / mf;
    let b = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (mf - 1.0);
    Ok((mean, w + (1.0 + 1.0 / mf) * b))
}

/// Impute once and run all three pooled analyses on the shared imputations.
pub fn analyze_mi(dataset: &Dataset, config: &ImputationConfig) -> Result<MiAnalysis> {
    let set = impute(dataset, config)?;
    let m = set.m;
    let n = dataset.n();
    let p = dataset.covariates.len();

    let mut per_fit: Vec<FittedPs> = Vec::with_capacity(m);
    let mut per_design: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    for (k, completed) in set.completed.iter().enumerate() {
        let design = completed.design_matrix(None)?;
        let z: Vec<f64> = completed.z.values().to_vec();
        let ps = estimate_ps(&design, &z).map_err(|e| {
            Error::Imputation(format!("propensity fit failed on imputation {k}: {e}"))
        })?;
        per_fit.push(ps);
        per_design.push(design);
    }

    // MIte: effect and PS-corrected variance inside each imputation, pooled
    let mut per_imputation = Vec::with_capacity(m);
    let mut mu1_sum = 0.0;
    let mut mu0_sum = 0.0;
    for (k, completed) in set.completed.iter().enumerate() {
        let y = completed.y.values();
        let z = completed.z.values();
        let mm = iptw::iptw_means(y, z, &per_fit[k].scores)?;
        mu1_sum += mm.mu1;
        mu0_sum += mm.mu0;
        let mut estimates = Vec::with_capacity(EffectMeasure::ALL.len());
        for measure in EffectMeasure::ALL {
            let theta = effect(mm.mu1, mm.mu0, measure)?;
            let v = iptw::var_ps_corrected(
                y,
                z,
                &per_design[k],
                &per_fit[k].scores,
                &per_fit[k].alpha_cov,
                mm.mu1,
                mm.mu0,
                measure,
            )?;
            estimates.push((theta, v.value));
        }
        per_imputation.push(PerImputationRecord { estimates });
    }
    // reported means are the per-imputation averages, keeping the three
    // contrasts tied to a single (mu1, mu0) summary
    let mu1_bar = mu1_sum / m as f64;
    let mu0_bar = mu0_sum / m as f64;
    let mut mite_estimates = Vec::with_capacity(EffectMeasure::ALL.len());
    for (mi, measure) in EffectMeasure::ALL.iter().enumerate() {
        let thetas: Vec<f64> = per_imputation.iter().map(|r| r.estimates[mi].0).collect();
        let ws: Vec<f64> = per_imputation.iter().map(|r| r.estimates[mi].1).collect();
        let (pooled, var) = rubin_pool(&thetas, &ws)?;
        let half = Z_975 * var.sqrt();
        mite_estimates.push(EffectEstimate {
            measure: *measure,
            estimate: pooled,
            variance: var,
            ci_low: pooled - half,
            ci_high: pooled + half,
            mu1: mu1_bar,
            mu0: mu0_bar,
            variance_flavor: VarianceFlavor::PsPlusMi,
            warnings: Vec::new(),
        });
    }
    let mite = StrategyResult {
        strategy: Strategy::Mite,
        estimates: mite_estimates,
        n_used: n,
        rows_used: None,
        scores: per_fit.iter().fold(vec![0.0; n], |mut acc, f| {
            for (a, &s) in acc.iter_mut().zip(&f.scores) {
                *a += s / m as f64;
            }
            acc
        }),
        per_imputation: Some(per_imputation),
    };

    // averaged covariates (fractional binaries) and parameter moments
    let mut avg_design = DMatrix::zeros(n, p + 1);
    for design in &per_design {
        avg_design += design;
    }
    avg_design /= m as f64;

    let dim = p + 1;
    let mut alpha_bar = DVector::zeros(dim);
    for f in &per_fit {
        alpha_bar += &f.alpha;
    }
    alpha_bar /= m as f64;
    let mut w_mat = DMatrix::zeros(dim, dim);
    for f in &per_fit {
        w_mat += f.alpha_cov.as_matrix();
    }
    w_mat /= m as f64;
    let mut b_mat = DMatrix::zeros(dim, dim);
    for f in &per_fit {
        let d = &f.alpha - &alpha_bar;
        b_mat += &d * d.transpose();
    }
    b_mat /= (m - 1) as f64;
    let w_cov = CovMatrix::from_matrix(w_mat)?;
    let b_cov = CovMatrix::from_matrix(b_mat)?;

    let pooled_ok = dataset.y.fully_observed() && dataset.z.fully_observed();
    let pooled_analysis =
        |strategy: Strategy, scores: Vec<f64>| -> std::result::Result<StrategyResult, String> {
            if !pooled_ok {
                return Err("pooled scores need fully observed outcome and treatment".to_string());
            }
            let y = dataset.y.values();
            let z = dataset.z.values();
            let run = || -> Result<StrategyResult> {
                let mm = iptw::iptw_means(y, z, &scores)?;
                let estimates =
                    estimates_for_all_measures(mm.mu1, mm.mu0, mm.extreme_weights, |measure| {
                        let v = iptw::var_mipar(
                            y,
                            z,
                            &avg_design,
                            &scores,
                            &w_cov,
                            &b_cov,
                            m,
                            mm.mu1,
                            mm.mu0,
                            measure,
                        )?;
                        Ok((v, VarianceFlavor::PsPlusMi))
                    })?;
                Ok(StrategyResult {
                    strategy,
                    estimates,
                    n_used: n,
                    rows_used: None,
                    scores: scores.clone(),
                    per_imputation: None,
                })
            };
            run().map_err(|e| e.to_string())
        };

    // MIps: average the per-individual scores across imputations
    let mut mips_scores = vec![0.0; n];
    for f in &per_fit {
        for (acc, &s) in mips_scores.iter_mut().zip(&f.scores) {
            *acc += s / m as f64;
        }
    }
    let mips = pooled_analysis(Strategy::Mips, mips_scores);

    // MIpar: score the averaged covariates at the averaged coefficients
    let eta = &avg_design * &alpha_bar;
    let mipar_scores: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mipar = pooled_analysis(Strategy::Mipar, mipar_scores);

    Ok(MiAnalysis {
        imputations: set,
        per_fit,
        mite,
        mips,
        mipar,
        avg_design,
    })
}

pub fn analyze_mite(dataset: &Dataset, config: &ImputationConfig) -> Result<StrategyResult> {
    Ok(analyze_mi(dataset, config)?.mite)
}

pub fn analyze_mips(dataset: &Dataset, config: &ImputationConfig) -> Result<StrategyResult> {
    analyze_mi(dataset, config)?
        .mips
        .map_err(|reason| Error::StrategyFailure {
            strategy: "MIps",
            reason,
        })
}

pub fn analyze_mipar(dataset: &Dataset, config: &ImputationConfig) -> Result<StrategyResult> {
    analyze_mi(dataset, config)?
        .mipar
        .map_err(|reason| Error::StrategyFailure {
            strategy: "MIpar",
            reason,
        })
}
