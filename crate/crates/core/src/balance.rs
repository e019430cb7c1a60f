//! Standardized-difference diagnostics, unweighted and weighted.
//!
//! The standardized difference of a covariate between treatment arms is
//! 100·|x̄₁ − x̄₀| / √{(s₁² + s₀²)/2}; for binary covariates the arm
//! variances are P̂(1 − P̂). Weighted versions replace the means and
//! variances by their frequency-weighted equivalents, with weights
//! Z/ê + (1−Z)/(1−ê).

use serde::Serialize;

use crate::mice::{ColumnKind, Dataset};
use crate::strategies::{MiAnalysis, Strategy, StrategyResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceView {
    /// Unweighted imbalance on the pre-deletion data.
    Crude,
    /// Weighted imbalance on the (pre-deletion) covariate values.
    WeightedFull,
    /// Weighted imbalance within each imputed dataset, averaged over
    /// imputations.
    WeightedPerImputation,
    /// Weighted imbalance of the cellwise-averaged imputed covariates.
    WeightedAvgImputed,
    /// Weighted imbalance restricted to rows where the covariate was
    /// observed.
    ObservedPart,
    /// Weighted imbalance restricted to rows where the covariate was
    /// missing (averaged imputed values for MI, true values for the
    /// pattern approach).
    ImputedPart,
}

impl BalanceView {
    pub fn label(&self) -> &'static str {
        match self {
            BalanceView::Crude => "crude",
            BalanceView::WeightedFull => "weighted_full",
            BalanceView::WeightedPerImputation => "weighted_per_imputation",
            BalanceView::WeightedAvgImputed => "weighted_avg_imputed",
            BalanceView::ObservedPart => "observed_part",
            BalanceView::ImputedPart => "imputed_part",
        }
    }
}

/// One standardized difference. `sdiff_percent` is NaN when the pooled
/// variance vanished (degenerate groups).
#[derive(Debug, Clone, Serialize)]
pub struct BalanceEntry {
    pub covariate: String,
    pub view: BalanceView,
    pub sdiff_percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub strategy: Strategy,
    pub entries: Vec<BalanceEntry>,
}

fn weighted_moments(x: &[f64], z: &[f64], w: Option<&[f64]>, arm: f64) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swx = 0.0;
    for i in 0..x.len() {
        if z[i] == arm {
            let wi = w.map_or(1.0, |w| w[i]);
            sw += wi;
            swx += wi * x[i];
        }
    }
    if sw == 0.0 {
        return (0.0, f64::NAN, f64::NAN);
    }
    let mean = swx / sw;
    let mut swv = 0.0;
    for i in 0..x.len() {
        if z[i] == arm {
            let wi = w.map_or(1.0, |w| w[i]);
            swv += wi * (x[i] - mean).powi(2);
        }
    }
    (sw, mean, swv / sw)
}

/// Standardized difference (percent) for a continuous covariate.
pub fn sdiff_continuous(x: &[f64], z: &[f64], weights: Option<&[f64]>) -> f64 {
    let (_, m1, v1) = weighted_moments(x, z, weights, 1.0);
    let (_, m0, v0) = weighted_moments(x, z, weights, 0.0);
    let pooled = (v1 + v0) / 2.0;
    if pooled.is_nan() || pooled <= 0.0 {
        return f64::NAN;
    }
    100.0 * (m1 - m0).abs() / pooled.sqrt()
}

/// Standardized difference (percent) for a binary covariate, using the
/// Bernoulli variances P̂(1−P̂). Fractional values (averaged imputations)
/// are admitted; the variance formula still applies to the mean.
pub fn sdiff_binary(x: &[f64], z: &[f64], weights: Option<&[f64]>) -> f64 {
    let (_, p1, _) = weighted_moments(x, z, weights, 1.0);
    let (_, p0, _) = weighted_moments(x, z, weights, 0.0);
    let pooled = (p1 * (1.0 - p1) + p0 * (1.0 - p0)) / 2.0;
    if pooled.is_nan() || pooled <= 0.0 {
        return f64::NAN;
    }
    100.0 * (p1 - p0).abs() / pooled.sqrt()
}

fn sdiff(kind: ColumnKind, x: &[f64], z: &[f64], weights: Option<&[f64]>) -> f64 {
    match kind {
        ColumnKind::Continuous => sdiff_continuous(x, z, weights),
        ColumnKind::Binary => sdiff_binary(x, z, weights),
    }
}

/// IPTW weights from scores: 1/ê for treated rows, 1/(1−ê) otherwise.
pub fn weights_from_scores(z: &[f64], scores: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(scores)
        .map(|(&zi, &e)| if zi == 1.0 { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}

/// Unweighted standardized differences on a complete dataset.
pub fn crude_balance(dataset: &Dataset) -> BalanceReport {
    let z = dataset.z.values();
    let entries = dataset
        .covariates
        .iter()
        .map(|c| BalanceEntry {
            covariate: c.name.clone(),
            view: BalanceView::Crude,
            sdiff_percent: sdiff(c.kind, c.values(), z, None),
        })
        .collect();
    BalanceReport {
        strategy: Strategy::Crude,
        entries,
    }
}

/// The balance views available for a strategy result.
///
/// `pre` is the pre-deletion dataset when the caller is the simulator; the
/// weighted-full and missing-part views need it. `post` is the dataset the
/// strategy analyzed. `mi` supplies per-imputation scores and completed
/// covariates for the MI strategies.
pub fn balance_views(
    pre: Option<&Dataset>,
    post: &Dataset,
    result: &StrategyResult,
    mi: Option<&MiAnalysis>,
) -> BalanceReport {
    let mut entries = Vec::new();
    let full_z: Vec<f64> = post.z.values().to_vec();

    match result.strategy {
        Strategy::Crude => {
            if let Some(pre) = pre {
                return crude_balance(pre);
            }
        }
        Strategy::Full | Strategy::Cc => {
            // balance on the analyzed rows with fitted-score weights; cell
            // values come from the pre-deletion data when available (the
            // analyzed rows are complete either way)
            let source = pre.unwrap_or(post);
            let rows: Vec<usize> = match &result.rows_used {
                Some(r) => r.clone(),
                None => (0..post.n()).collect(),
            };
            let z: Vec<f64> = rows.iter().map(|&i| full_z[i]).collect();
            let w = weights_from_scores(&z, &result.scores);
            for c in &source.covariates {
                let x: Vec<f64> = rows.iter().map(|&i| c.values()[i]).collect();
                entries.push(BalanceEntry {
                    covariate: c.name.clone(),
                    view: BalanceView::WeightedFull,
                    sdiff_percent: sdiff(c.kind, &x, &z, Some(&w)),
                });
            }
        }
        Strategy::Mp => {
            let w = weights_from_scores(&full_z, &result.scores);
            if let Some(pre) = pre {
                for c in pre.covariates.iter() {
                    entries.push(BalanceEntry {
                        covariate: c.name.clone(),
                        view: BalanceView::WeightedFull,
                        sdiff_percent: sdiff(c.kind, c.values(), &full_z, Some(&w)),
                    });
                }
            }
            for (j, c) in post.covariates.iter().enumerate() {
                let observed: Vec<usize> = (0..post.n()).filter(|&i| !c.is_missing(i)).collect();
                entries.push(part_entry(
                    BalanceView::ObservedPart,
                    c.name.clone(),
                    c.kind,
                    &observed,
                    |i| c.values()[i],
                    &full_z,
                    &w,
                ));
                if c.fully_observed() {
                    continue;
                }
                if let Some(pre) = pre {
                    let missing: Vec<usize> = (0..post.n()).filter(|&i| c.is_missing(i)).collect();
                    let truth = &pre.covariates[j];
                    entries.push(part_entry(
                        BalanceView::ImputedPart,
                        c.name.clone(),
                        c.kind,
                        &missing,
                        |i| truth.values()[i],
                        &full_z,
                        &w,
                    ));
                }
            }
        }
        Strategy::Mite => {
            if let Some(mi) = mi {
                let m = mi.per_fit.len() as f64;
                for (j, c) in post.covariates.iter().enumerate() {
                    let mut on_pre = 0.0;
                    let mut on_imputed = 0.0;
                    for (fit, completed) in mi.per_fit.iter().zip(&mi.imputations.completed) {
                        let w = weights_from_scores(&full_z, &fit.scores);
                        if let Some(pre) = pre {
                            let truth = &pre.covariates[j];
                            on_pre += sdiff(c.kind, truth.values(), &full_z, Some(&w)) / m;
                        }
                        let imputed = &completed.covariates[j];
                        on_imputed += sdiff(c.kind, imputed.values(), &full_z, Some(&w)) / m;
                    }
                    if pre.is_some() {
                        entries.push(BalanceEntry {
                            covariate: c.name.clone(),
                            view: BalanceView::WeightedFull,
                            sdiff_percent: on_pre,
                        });
                    }
                    entries.push(BalanceEntry {
                        covariate: c.name.clone(),
                        view: BalanceView::WeightedPerImputation,
                        sdiff_percent: on_imputed,
                    });
                }
            }
        }
        Strategy::Mips | Strategy::Mipar => {
            if let Some(mi) = mi {
                let w = weights_from_scores(&full_z, &result.scores);
                for (j, c) in post.covariates.iter().enumerate() {
                    // averaged covariate values live in column j+1 of the design
                    let avg: Vec<f64> = (0..post.n()).map(|i| mi.avg_design[(i, j + 1)]).collect();
                    if let Some(pre) = pre {
                        let truth = &pre.covariates[j];
                        entries.push(BalanceEntry {
                            covariate: c.name.clone(),
                            view: BalanceView::WeightedFull,
                            sdiff_percent: sdiff(c.kind, truth.values(), &full_z, Some(&w)),
                        });
                    }
                    entries.push(BalanceEntry {
                        covariate: c.name.clone(),
                        view: BalanceView::WeightedAvgImputed,
                        sdiff_percent: sdiff(c.kind, &avg, &full_z, Some(&w)),
                    });
                    let observed: Vec<usize> =
                        (0..post.n()).filter(|&i| !c.is_missing(i)).collect();
                    entries.push(part_entry(
                        BalanceView::ObservedPart,
                        c.name.clone(),
                        c.kind,
                        &observed,
                        |i| avg[i],
                        &full_z,
                        &w,
                    ));
                    if !c.fully_observed() {
                        let missing: Vec<usize> =
                            (0..post.n()).filter(|&i| c.is_missing(i)).collect();
                        entries.push(part_entry(
                            BalanceView::ImputedPart,
                            c.name.clone(),
                            c.kind,
                            &missing,
                            |i| avg[i],
                            &full_z,
                            &w,
                        ));
                    }
                }
            }
        }
    }
    BalanceReport {
        strategy: result.strategy,
        entries,
    }
}

/// SDiff over a row subset, keeping the pooled weights of the full analysis.
fn part_entry(
    view: BalanceView,
    covariate: String,
    kind: ColumnKind,
    rows: &[usize],
    value_at: impl Fn(usize) -> f64,
    full_z: &[f64],
    full_w: &[f64],
) -> BalanceEntry {
    let x: Vec<f64> = rows.iter().map(|&i| value_at(i)).collect();
    let z: Vec<f64> = rows.iter().map(|&i| full_z[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| full_w[i]).collect();
    let sd = if rows.is_empty() {
        f64::NAN
    } else {
        sdiff(kind, &x, &z, Some(&w))
    };
    BalanceEntry {
        covariate,
        view,
        sdiff_percent: sd,
    }
}
