//! Command-line front end: scenario simulation, single-dataset analysis,
//! balance tables, and the exact counter-example.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iptw_mi::balance::{balance_views, crude_balance, BalanceReport};
use iptw_mi::error::{Error, Result};
use iptw_mi::harness::{
    analyze_dataset, apply_variant, emit_tables, load_config, read_dataset_csv, run_scenario,
    AnalyzeOptions,
};
use iptw_mi::iptw::EffectMeasure;
use iptw_mi::oracle;
use iptw_mi::simgen::{ScenarioConfig, Variant};
use iptw_mi::strategies::Strategy;

#[derive(Parser)]
#[command(
    name = "iptw-mi",
    version,
    about = "IPTW effect estimation with partially observed confounders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario and write summary/balance/replication CSVs.
    Simulate(SimulateArgs),
    /// Estimate the treatment effect on a CSV dataset with one strategy.
    Analyze(AnalyzeArgs),
    /// Print covariate balance diagnostics for a CSV dataset.
    Balance(AnalyzeArgs),
    /// Print the exact pooled-estimator counter-example quantities.
    Counterexample,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON (or a manifest.json from an earlier run).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario number (1-16).
    #[arg(long)]
    preset: Option<u8>,
    /// Design variant applied to the preset: base, miss_yz_mcar, rate10,
    /// rate60 or n500.
    #[arg(long, default_value = "base")]
    variant: String,
    /// Number of replications (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV with a header row; missing cells are empty or "NA".
    #[arg(long)]
    data: PathBuf,
    /// Strategy: crude, cc, mp, mite, mips or mipar.
    #[arg(long)]
    strategy: String,
    /// Outcome column (binary).
    #[arg(long)]
    outcome: String,
    /// Treatment column (binary).
    #[arg(long)]
    treatment: String,
    /// Comma-separated covariate columns for the propensity model.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Number of imputations for the MI strategies.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Chained-equation cycles per imputation.
    #[arg(long, default_value_t = 10)]
    cycles: usize,
    /// Exclude the outcome from the imputation models.
    #[arg(long)]
    no_outcome_in_imputation: bool,
    /// Master seed for imputation draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Minimum rows per missingness-pattern stratum before merging.
    #[arg(long, default_value_t = 50)]
    min_stratum: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Analyze(args) => analyze(args, false),
        Command::Balance(args) => analyze(args, true),
        Command::Counterexample => counterexample(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    let mut cfg: ScenarioConfig = match (&args.config, args.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(k)) => {
            let base = ScenarioConfig::preset(
                k,
                args.seed.unwrap_or(20_240_101),
                args.reps.unwrap_or(500),
            )?;
            apply_variant(base, Variant::parse(&args.variant)?)?
        }
        (None, None) => {
            return Err(Error::Input(
                "either --config or --preset is required".into(),
            ))
        }
    };
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let run = run_scenario(&cfg)?;
    emit_tables(&run, &args.out)?;
    println!(
        "scenario complete: {} replications, {} strategy failures",
        cfg.reps,
        run.summary.failures.len()
    );
    println!(
        "truth: log RR = {:.4}, log OR = {:.4}, RD = {:.4}",
        run.summary.truth.log_rr, run.summary.truth.log_or, run.summary.truth.rd
    );
    for measure in EffectMeasure::ALL {
        for strategy in Strategy::ALL {
            if let Some(cell) = run.summary.cell(strategy, measure) {
                println!(
                    "{:8} {:8} bias {:+.4}  variance {:.4}  coverage {:.3}",
                    measure.label(),
                    strategy.label(),
                    cell.bias,
                    cell.mean_variance,
                    cell.coverage
                );
            }
        }
    }
    println!("tables written to {}", args.out.display());
    Ok(())
}

fn print_balance(report: &BalanceReport) {
    for entry in &report.entries {
        let value = if entry.sdiff_percent.is_nan() {
            "      NA".to_string()
        } else {
            format!("{:8.2}", entry.sdiff_percent)
        };
        println!(
            "{:8} {:24} {:6} {}",
            report.strategy.label(),
            entry.view.label(),
            entry.covariate,
            value
        );
    }
}

fn analyze(args: AnalyzeArgs, balance_only: bool) -> Result<()> {
    if args.covariates.is_empty() {
        return Err(Error::Input("at least one covariate is required".into()));
    }
    let strategy = Strategy::parse(&args.strategy)?;
    let dataset = read_dataset_csv(&args.data, &args.outcome, &args.treatment, &args.covariates)?;
    let opts = AnalyzeOptions {
        m: args.m,
        cycles: args.cycles,
        include_outcome: !args.no_outcome_in_imputation,
        seed: args.seed,
        min_stratum: args.min_stratum,
        ..AnalyzeOptions::default()
    };
    let (result, mi) = analyze_dataset(&dataset, strategy, &opts)?;

    if balance_only {
        println!("method   view                     column   sdiff%");
        print_balance(&crude_balance(&dataset.subset(&dataset.complete_rows())?));
        print_balance(&balance_views(None, &dataset, &result, mi.as_ref()));
        return Ok(());
    }

    println!(
        "strategy: {} (n used = {})",
        result.strategy.label(),
        result.n_used
    );
    println!("measure    estimate    variance    95% CI");
    for estimate in &result.estimates {
        let (point, lo, hi) = match estimate.measure {
            EffectMeasure::LogRr | EffectMeasure::LogOr => (
                estimate.estimate.exp(),
                estimate.ci_low.exp(),
                estimate.ci_high.exp(),
            ),
            EffectMeasure::Rd => (estimate.estimate, estimate.ci_low, estimate.ci_high),
        };
        println!(
            "{:8} {:10.4} {:11.5}    [{:.4}; {:.4}]",
            estimate.measure.label(),
            point,
            estimate.variance,
            lo,
            hi
        );
        for warning in &estimate.warnings {
            eprintln!("  note ({}): {warning}", estimate.measure.label());
        }
    }
    println!("(RR and OR are reported on the ratio scale; variances are on the log scale)");
    println!();
    println!("balance (weighted standardized differences, %):");
    println!("method   view                     column   sdiff%");
    print_balance(&balance_views(None, &dataset, &result, mi.as_ref()));
    Ok(())
}

fn counterexample() -> Result<()> {
    let ce = oracle::counterexample();
    println!("quantity                                value");
    println!(
        "true E[Y^(z=1)]                         {:.6}",
        ce.theta_true
    );
    println!(
        "E[score | X missing, Z=1, Y=1]          {:.6}",
        ce.e_expected_missing
    );
    println!(
        "pooled-score weighted expectation       {:.6}",
        ce.mips_expectation
    );
    println!(
        "score at averaged confounder            {:.6}",
        ce.mipar_ps_at_xbar
    );
    println!(
        "pooled-parameter weighted expectation   {:.6}",
        ce.mipar_expectation
    );
    Ok(())
}
