//! Replication engine, metrics aggregation and table emission.
//!
//! `run_scenario` executes the configured number of replications (in
//! parallel, each on its own random stream), applies every strategy, and
//! folds the per-replication records into bias / variance / coverage
//! summaries plus averaged balance grids. Aggregation visits replications in
//! index order, so output files are byte-identical across reruns and thread
//! counts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{balance_views, BalanceReport, BalanceView};
use crate::error::{Error, Result};
use crate::iptw::{EffectMeasure, VarianceFlavor};
use crate::mice::{Column, ColumnKind, Dataset, ImputationConfig};
use crate::numstat::RngStream;
use crate::simgen::{generate, truth_for, ScenarioConfig, ScenarioTruth, Variant};
use crate::strategies::{
    self, Strategy, StrategyResult, DEFAULT_MIN_COMPLETE, DEFAULT_MIN_STRATUM,
};

/// Monte Carlo size used when resolving scenario truth.
pub const TRUTH_MC_DRAWS: usize = 4_000_000;

/// One successful strategy × measure record within a replication.
#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub strategy: Strategy,
    pub measure: EffectMeasure,
    pub estimate: f64,
    pub variance: f64,
    pub variance_flavor: VarianceFlavor,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    pub mu1: f64,
    pub mu0: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub strategy: Strategy,
    pub message: String,
}

/// Aggregated metrics for one strategy × measure cell.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub strategy: Strategy,
    pub measure: EffectMeasure,
    pub n_success: usize,
    pub bias: f64,
    pub mean_variance: f64,
    /// Absent when fewer than two successful replications.
    pub empirical_variance: Option<f64>,
    pub coverage: f64,
    pub covered_count: usize,
    /// Mean analyzed sample size (complete-case size for CC).
    pub mean_n_used: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceCell {
    pub strategy: Strategy,
    pub view: BalanceView,
    pub covariate: String,
    pub mean_sdiff: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub config: ScenarioConfig,
    pub truth: ScenarioTruth,
    pub cells: Vec<SummaryCell>,
    pub balance: Vec<BalanceCell>,
    pub failures: Vec<RepFailure>,
}

impl ScenarioSummary {
    pub fn cell(&self, strategy: Strategy, measure: EffectMeasure) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.measure == measure)
    }

    pub fn balance_cell(
        &self,
        strategy: Strategy,
        view: BalanceView,
        covariate: &str,
    ) -> Option<&BalanceCell> {
        self.balance
            .iter()
            .find(|b| b.strategy == strategy && b.view == view && b.covariate == covariate)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: ScenarioSummary,
    pub records: Vec<RepRecord>,
}

/// Reproducibility envelope written next to the result tables. Feeding the
/// manifest back to `simulate --config` reruns the identical study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ScenarioConfig,
    pub software_version: String,
    pub created_unix: u64,
    pub n_failed: usize,
    pub failures: Vec<RepFailure>,
}

/// Everything produced by the strategies on one replication.
struct RepOutcome {
    rep: usize,
    results: Vec<std::result::Result<StrategyResult, String>>, // aligned with strategies list
    balance: Vec<BalanceReport>,
}

fn run_replication(
    cfg: &ScenarioConfig,
    root: &RngStream,
    rep: usize,
    strategies_to_run: &[Strategy],
    compute_balance: bool,
) -> Result<RepOutcome> {
    let rep_stream = root.substream(rep as u64);
    let (pre, post) = generate(cfg, &rep_stream.substream(0))?;
    let imp_cfg = ImputationConfig {
        m: cfg.m,
        cycles: cfg.cycles,
        include_outcome: cfg.include_outcome,
        pmm: false,
        stream: rep_stream.substream(1),
    };

    let wants_mi = strategies_to_run
        .iter()
        .any(|s| matches!(s, Strategy::Mite | Strategy::Mips | Strategy::Mipar));
    let mi = if wants_mi {
        Some(strategies::analyze_mi(&post, &imp_cfg))
    } else {
        None
    };

    let mut results = Vec::with_capacity(strategies_to_run.len());
    let mut balance = Vec::new();
    for &strategy in strategies_to_run {
        let outcome: std::result::Result<StrategyResult, String> = match strategy {
            Strategy::Crude => strategies::analyze_crude(&post).map_err(|e| e.to_string()),
            Strategy::Full => strategies::analyze_full(&pre).map_err(|e| e.to_string()),
            Strategy::Cc => {
                strategies::analyze_cc(&post, DEFAULT_MIN_COMPLETE).map_err(|e| e.to_string())
            }
            Strategy::Mp => {
                strategies::analyze_mp(&post, DEFAULT_MIN_STRATUM).map_err(|e| e.to_string())
            }
            Strategy::Mite => match &mi {
                Some(Ok(a)) => Ok(a.mite.clone()),
                Some(Err(e)) => Err(e.to_string()),
                None => unreachable!(),
            },
            Strategy::Mips => match &mi {
                Some(Ok(a)) => a.mips.clone(),
                Some(Err(e)) => Err(e.to_string()),
                None => unreachable!(),
            },
            Strategy::Mipar => match &mi {
                Some(Ok(a)) => a.mipar.clone(),
                Some(Err(e)) => Err(e.to_string()),
                None => unreachable!(),
            },
        };
        if compute_balance {
            if let Ok(result) = &outcome {
                let mi_ref = match &mi {
                    Some(Ok(a)) => Some(a),
                    _ => None,
                };
                balance.push(balance_views(Some(&pre), &post, result, mi_ref));
            }
        }
        results.push(outcome);
    }
    Ok(RepOutcome {
        rep,
        results,
        balance,
    })
}

/// Run a scenario with every strategy and balance collection enabled.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    run_scenario_with(cfg, &Strategy::ALL, true)
}

/// Run a scenario for a subset of strategies, optionally skipping balance
/// collection.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    strategies_to_run: &[Strategy],
    compute_balance: bool,
) -> Result<ScenarioRun> {
    if cfg.reps == 0 {
        return Err(Error::Parameter(
            "scenario needs at least one replication".into(),
        ));
    }
    let truth = truth_for(cfg, TRUTH_MC_DRAWS)?;
    let root = RngStream::new(cfg.seed, 0);

    let outcomes: Vec<Result<RepOutcome>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, &root, rep, strategies_to_run, compute_balance))
        .collect();

    // deterministic fold in replication order
    let mut records: Vec<RepRecord> = Vec::new();
    let mut failures: Vec<RepFailure> = Vec::new();
    let mut balance_acc: BTreeMap<(Strategy, BalanceView, String), (f64, usize)> = BTreeMap::new();
    for outcome in outcomes {
        let outcome = outcome?;
        for (slot, res) in outcome.results.iter().enumerate() {
            let strategy = strategies_to_run[slot];
            match res {
                Ok(result) => {
                    for estimate in &result.estimates {
                        records.push(RepRecord {
                            rep: outcome.rep,
                            strategy,
                            measure: estimate.measure,
                            estimate: estimate.estimate,
                            variance: estimate.variance,
                            variance_flavor: estimate.variance_flavor,
                            ci_low: estimate.ci_low,
                            ci_high: estimate.ci_high,
                            covered: estimate.covers(truth.for_measure(estimate.measure)),
                            mu1: estimate.mu1,
                            mu0: estimate.mu0,
                            n_used: result.n_used,
                        });
                    }
                }
                Err(message) => failures.push(RepFailure {
                    rep: outcome.rep,
                    strategy,
                    message: message.clone(),
                }),
            }
        }
        for report in outcome.balance {
            for entry in report.entries {
                if entry.sdiff_percent.is_nan() {
                    continue;
                }
                let key = (report.strategy, entry.view, entry.covariate);
                let acc = balance_acc.entry(key).or_insert((0.0, 0));
                acc.0 += entry.sdiff_percent;
                acc.1 += 1;
            }
        }
    }

    let mut cells = Vec::new();
    for &strategy in strategies_to_run {
        for measure in EffectMeasure::ALL {
            let sel: Vec<&RepRecord> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.measure == measure)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len();
            let nf = n as f64;
            let mean_est = sel.iter().map(|r| r.estimate).sum::<f64>() / nf;
            let mean_var = sel.iter().map(|r| r.variance).sum::<f64>() / nf;
            let emp_var = if n >= 2 {
                Some(
                    sel.iter()
                        .map(|r| (r.estimate - mean_est).powi(2))
                        .sum::<f64>()
                        / (nf - 1.0),
                )
            } else {
                None
            };
            let covered = sel.iter().filter(|r| r.covered).count();
            let mean_n = sel.iter().map(|r| r.n_used as f64).sum::<f64>() / nf;
            cells.push(SummaryCell {
                strategy,
                measure,
                n_success: n,
                bias: mean_est - truth.for_measure(measure),
                mean_variance: mean_var,
                empirical_variance: emp_var,
                coverage: covered as f64 / nf,
                covered_count: covered,
                mean_n_used: mean_n,
            });
        }
    }

    let balance = balance_acc
        .into_iter()
        .map(|((strategy, view, covariate), (sum, n))| BalanceCell {
            strategy,
            view,
            covariate,
            mean_sdiff: sum / n as f64,
            n,
        })
        .collect();

    Ok(ScenarioRun {
        summary: ScenarioSummary {
            config: cfg.clone(),
            truth,
            cells,
            balance,
            failures,
        },
        records,
    })
}

fn fmt_cell(v: f64) -> String {
    format!("{v:.6}")
}

/// Summary CSV: rows {bias, variance, empirical_variance, coverage} per
/// measure, method columns in the fixed study order.
pub fn write_summary_csv<W: Write>(summary: &ScenarioSummary, mut out: W) -> Result<()> {
    let methods = Strategy::ALL;
    let header: Vec<String> = std::iter::once("measure".to_string())
        .chain(std::iter::once("metric".to_string()))
        .chain(methods.iter().map(|s| s.label().to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for measure in EffectMeasure::ALL {
        for metric in ["bias", "variance", "empirical_variance", "coverage"] {
            let mut row = vec![measure.label().to_string(), metric.to_string()];
            for strategy in methods {
                let cell = summary.cell(strategy, measure);
                let text = match (cell, metric) {
                    (Some(c), "bias") => fmt_cell(c.bias),
                    (Some(c), "variance") => fmt_cell(c.mean_variance),
                    (Some(c), "empirical_variance") => {
                        c.empirical_variance.map(fmt_cell).unwrap_or_default()
                    }
                    (Some(c), "coverage") => fmt_cell(c.coverage),
                    _ => String::new(),
                };
                row.push(text);
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Balance CSV: one row per method × view with covariate columns.
pub fn write_balance_csv<W: Write>(summary: &ScenarioSummary, mut out: W) -> Result<()> {
    let covariates: Vec<String> = {
        let mut names: Vec<String> = summary
            .balance
            .iter()
            .map(|b| b.covariate.clone())
            .collect();
        names.sort();
        names.dedup();
        names
    };
    let mut header = vec!["method".to_string(), "view".to_string()];
    header.extend(covariates.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    let views = [
        BalanceView::Crude,
        BalanceView::WeightedFull,
        BalanceView::WeightedPerImputation,
        BalanceView::WeightedAvgImputed,
        BalanceView::ObservedPart,
        BalanceView::ImputedPart,
    ];
    for strategy in Strategy::ALL {
        for view in views {
            let mut row = vec![strategy.label().to_string(), view.label().to_string()];
            let mut any = false;
            for cov in &covariates {
                match summary.balance_cell(strategy, view, cov) {
                    Some(cell) => {
                        any = true;
                        row.push(format!("{:.4}", cell.mean_sdiff));
                    }
                    None => row.push(String::new()),
                }
            }
            if any {
                writeln!(out, "{}", row.join(","))?;
            }
        }
    }
    Ok(())
}

/// Raw per-replication CSV.
pub fn write_records_csv<W: Write>(records: &[RepRecord], mut out: W) -> Result<()> {
    writeln!(
        out,
        "rep,strategy,measure,estimate,variance,variance_flavor,ci_low,ci_high,covered,mu1,mu0,n_used"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.rep,
            r.strategy.label(),
            r.measure.label(),
            fmt_cell(r.estimate),
            fmt_cell(r.variance),
            r.variance_flavor.label(),
            fmt_cell(r.ci_low),
            fmt_cell(r.ci_high),
            u8::from(r.covered),
            fmt_cell(r.mu1),
            fmt_cell(r.mu0),
            r.n_used
        )?;
    }
    Ok(())
}

/// Write the summary, balance and per-rep CSVs plus the manifest into `dir`.
pub fn emit_tables(run: &ScenarioRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary_file = std::fs::File::create(dir.join("summary.csv"))?;
    write_summary_csv(&run.summary, std::io::BufWriter::new(summary_file))?;
    let balance_file = std::fs::File::create(dir.join("balance.csv"))?;
    write_balance_csv(&run.summary, std::io::BufWriter::new(balance_file))?;
    let records_file = std::fs::File::create(dir.join("replications.csv"))?;
    write_records_csv(&run.records, std::io::BufWriter::new(records_file))?;

    let manifest = RunManifest {
        config: run.summary.config.clone(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        n_failed: run.summary.failures.len(),
        failures: run.summary.failures.clone(),
    };
    let manifest_file = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(manifest_file), &manifest)?;
    Ok(())
}

/// Parse a scenario config from JSON; a manifest produced by an earlier run
/// is accepted and its embedded config reused.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
        return Ok(manifest.config);
    }
    let cfg: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("could not parse scenario config: {e}")))?;
    Ok(cfg)
}

/// Missing-cell encodings accepted in input CSVs.
fn parse_cell(raw: &str) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Input(format!("could not parse numeric cell '{raw}'")))
}

/// Read a dataset from CSV given the column roles. Binary columns are
/// detected from the observed values ({0,1} only); anything else is treated
/// as continuous. Outcome and treatment must be binary.
pub fn read_dataset_csv(
    path: &Path,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("column '{name}' not found in {}", path.display())))
    };
    let y_idx = col_index(outcome)?;
    let z_idx = col_index(treatment)?;
    let cov_idx: Vec<usize> = covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;

    let mut y_vals: Vec<Option<f64>> = Vec::new();
    let mut z_vals: Vec<Option<f64>> = Vec::new();
    let mut cov_vals: Vec<Vec<Option<f64>>> = vec![Vec::new(); covariates.len()];
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let get =
            |idx: usize| -> Result<Option<f64>> {
                parse_cell(record.get(idx).ok_or_else(|| {
                    Error::Input(format!("row {}: missing field {idx}", row_no + 2))
                })?)
                .map_err(|e| Error::Input(format!("row {}: {e}", row_no + 2)))
            };
        y_vals.push(get(y_idx)?);
        z_vals.push(get(z_idx)?);
        for (slot, &idx) in cov_idx.iter().enumerate() {
            cov_vals[slot].push(get(idx)?);
        }
    }
    if y_vals.is_empty() {
        return Err(Error::Input(format!(
            "{} contains no data rows",
            path.display()
        )));
    }

    let to_column = |name: &str, vals: &[Option<f64>], force_binary: bool| -> Result<Column> {
        let observed: Vec<f64> = vals.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(Error::Input(format!(
                "column '{name}' has no observed values"
            )));
        }
        let binary = observed.iter().all(|&v| v == 0.0 || v == 1.0);
        if force_binary && !binary {
            return Err(Error::Input(format!(
                "column '{name}' must be binary (0/1)"
            )));
        }
        let kind = if binary {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        };
        let values: Vec<f64> = vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let mask: Vec<bool> = vals.iter().map(|v| v.is_none()).collect();
        Column::new(name, kind, values, mask)
    };

    Dataset::new(
        to_column(outcome, &y_vals, true)?,
        to_column(treatment, &z_vals, true)?,
        covariates
            .iter()
            .zip(&cov_vals)
            .map(|(name, vals)| to_column(name, vals, false))
            .collect::<Result<_>>()?,
    )
}

/// Write a dataset back to CSV; missing cells become empty fields.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec![dataset.y.name.clone(), dataset.z.name.clone()];
    header.extend(dataset.covariates.iter().map(|c| c.name.clone()));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..dataset.n() {
        let cell = |c: &Column| {
            if c.is_missing(i) {
                String::new()
            } else {
                let v = c.values()[i];
                if c.kind == ColumnKind::Binary {
                    format!("{}", v as u8)
                } else {
                    format!("{v}")
                }
            }
        };
        let mut row = vec![cell(&dataset.y), cell(&dataset.z)];
        row.extend(dataset.covariates.iter().map(cell));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Options for a single-dataset analysis.
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub m: usize,
    pub cycles: usize,
    pub include_outcome: bool,
    pub seed: u64,
    pub min_stratum: usize,
    pub min_complete: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            m: 10,
            cycles: 10,
            include_outcome: true,
            seed: 42,
            min_stratum: DEFAULT_MIN_STRATUM,
            min_complete: DEFAULT_MIN_COMPLETE,
        }
    }
}

/// Run one strategy on a user dataset. The full-data strategy is rejected:
/// it needs pre-deletion truth that only the simulator has.
pub fn analyze_dataset(
    dataset: &Dataset,
    strategy: Strategy,
    opts: &AnalyzeOptions,
) -> Result<(StrategyResult, Option<strategies::MiAnalysis>)> {
    match strategy {
        Strategy::Full => Err(Error::Input(
            "strategy 'full' is only available inside the simulator (needs pre-deletion data)"
                .into(),
        )),
        Strategy::Crude => Ok((strategies::analyze_crude(dataset)?, None)),
        Strategy::Cc => Ok((strategies::analyze_cc(dataset, opts.min_complete)?, None)),
        Strategy::Mp => Ok((strategies::analyze_mp(dataset, opts.min_stratum)?, None)),
        Strategy::Mite | Strategy::Mips | Strategy::Mipar => {
            let cfg = ImputationConfig {
                m: opts.m,
                cycles: opts.cycles,
                include_outcome: opts.include_outcome,
                pmm: false,
                stream: RngStream::new(opts.seed, 0),
            };
            let mi = strategies::analyze_mi(dataset, &cfg)?;
            let result = match strategy {
                Strategy::Mite => Ok(mi.mite.clone()),
                Strategy::Mips => mi.mips.clone().map_err(|reason| Error::StrategyFailure {
                    strategy: "MIps",
                    reason,
                }),
                _ => mi.mipar.clone().map_err(|reason| Error::StrategyFailure {
                    strategy: "MIpar",
                    reason,
                }),
            }?;
            Ok((result, Some(mi)))
        }
    }
}

/// Variant presets exposed by the CLI.
pub fn apply_variant(cfg: ScenarioConfig, variant: Variant) -> Result<ScenarioConfig> {
    cfg.with_variant(variant, 1_000_000)
}
