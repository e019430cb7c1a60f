//! Acceptance gate: every criterion prints one PASS/FAIL line per sub-check
//! (visible with `cargo test --test acceptance -- --nocapture`) and the test
//! fails if any sub-check misses its tolerance.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;

use iptw_mi::balance::{sdiff_binary, sdiff_continuous, weights_from_scores, BalanceView};
use iptw_mi::harness::{run_scenario, run_scenario_with, ScenarioRun};
use iptw_mi::iptw::{self, EffectMeasure};
use iptw_mi::mice::{impute, ImputationConfig};
use iptw_mi::numstat::{expit, fit_logistic, mvn_sample, CovMatrix, RngStream};
use iptw_mi::oracle;
use iptw_mi::simgen::{
    calibrate_theta_c, generate, truth_for, ScenarioConfig, Variant, TREATMENT_COEFS,
};
use iptw_mi::strategies::{rubin_pool, Strategy};

const SEED: u64 = 20_240_601;
const DESK_REPS: usize = 500;

/// Collect sub-check outcomes so a single criterion reports every miss.
struct Gate {
    name: &'static str,
    failures: Vec<String>,
}

impl Gate {
    fn new(name: &'static str) -> Self {
        Gate {
            name,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, label: &str, detail: String) {
        if ok {
            println!("PASS {} / {label}: {detail}", self.name);
        } else {
            println!("FAIL {} / {label}: {detail}", self.name);
            self.failures.push(format!("{label}: {detail}"));
        }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        self.check(
            (value - target).abs() <= tol,
            label,
            format!("value {value:.4}, target {target:.4} ± {tol:.4}"),
        );
    }

    fn finish(self) {
        if !self.failures.is_empty() {
            panic!(
                "{}: {} sub-check(s) failed\n{}",
                self.name,
                self.failures.len(),
                self.failures.join("\n")
            );
        }
        println!("PASS {}", self.name);
    }
}

fn scenario7() -> &'static ScenarioRun {
    static RUN: OnceLock<ScenarioRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ScenarioConfig::preset(7, SEED, DESK_REPS).unwrap();
        run_scenario(&cfg).unwrap()
    })
}

fn bias(run: &ScenarioRun, strategy: Strategy) -> f64 {
    run.summary
        .cell(strategy, EffectMeasure::LogRr)
        .expect("cell")
        .bias
}

fn coverage(run: &ScenarioRun, strategy: Strategy) -> f64 {
    run.summary
        .cell(strategy, EffectMeasure::LogRr)
        .expect("cell")
        .coverage
}

#[test]
fn criterion_1_counterexample_oracle() {
    let mut gate = Gate::new("criterion 1 (counterexample oracle)");
    let t0 = std::time::Instant::now();
    let ce = oracle::counterexample();
    gate.check(
        ce.theta_true == 0.5,
        "theta_true",
        format!("{} (must equal 0.5 exactly)", ce.theta_true),
    );
    gate.within(
        "pooled-score expectation",
        ce.mips_expectation,
        0.465,
        0.001,
    );
    gate.within(
        "pooled-parameter expectation",
        ce.mipar_expectation,
        0.462,
        0.001,
    );
    gate.within(
        "expected score on missing rows",
        ce.e_expected_missing,
        0.890,
        0.001,
    );
    gate.within(
        "score at averaged confounder",
        ce.mipar_ps_at_xbar,
        0.895,
        0.001,
    );
    gate.check(
        t0.elapsed().as_secs_f64() < 1.0,
        "runtime",
        format!("{:?} (< 1 s)", t0.elapsed()),
    );

    // two independent code paths agree on the pooled rules
    let world = oracle::DiscreteWorld::counterexample();
    let mips =
        oracle::brute_force_iptw_expectation(&world, oracle::pooled_score_rule(&world)).unwrap();
    let mipar = oracle::brute_force_iptw_expectation(&world, oracle::pooled_parameter_rule(&world))
        .unwrap();
    gate.check(
        (mips - ce.mips_expectation).abs() < 1e-12 && (mipar - ce.mipar_expectation).abs() < 1e-12,
        "enumeration vs brute force",
        format!(
            "deltas {:.2e}, {:.2e}",
            (mips - ce.mips_expectation).abs(),
            (mipar - ce.mipar_expectation).abs()
        ),
    );
    gate.finish();
}

fn sample_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma).powi(2);
        sb += (b[i] - mb).powi(2);
    }
    sab / (sa * sb).sqrt()
}

#[test]
fn criterion_2_generator_calibration() {
    let mut gate = Gate::new("criterion 2 (generator calibration)");

    // dichotomized correlations at both design values of rho
    for (rho, want) in [(0.3, 0.24), (0.6, 0.48)] {
        let draws = mvn_sample(&RngStream::new(SEED, 11), 1_000_000, rho).unwrap();
        let x1: Vec<f64> = (0..draws.nrows()).map(|i| draws[(i, 0)]).collect();
        let x3: Vec<f64> = (0..draws.nrows())
            .map(|i| if draws[(i, 2)] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        gate.within(
            &format!("corr(X1, X3) at rho={rho}"),
            sample_correlation(&x1, &x3),
            want,
            0.01,
        );
    }

    // missing rates under both (gamma_Y, gamma_0) pairs
    for (scenario, label) in [
        (7u8, "gamma_Y=-0.4, gamma_0=-1.3"),
        (8, "gamma_Y=0, gamma_0=-1.5"),
    ] {
        let mut cfg = ScenarioConfig::preset(scenario, SEED, 1).unwrap();
        cfg.n = 1_000_000;
        let (_, post) = generate(&cfg, &RngStream::new(SEED, 13 + scenario as u64)).unwrap();
        gate.within(
            &format!("missing rate x1 ({label})"),
            post.covariate("x1").unwrap().missing_rate(),
            0.30,
            0.01,
        );
        gate.within(
            &format!("missing rate x3 ({label})"),
            post.covariate("x3").unwrap().missing_rate(),
            0.30,
            0.01,
        );
    }

    // theta_c recovery by marginal calibration
    let t03 = calibrate_theta_c(0.3, 2.0, &RngStream::new(SEED, 17), 8_000_000).unwrap();
    gate.within("theta_c at rho=0.3", t03, 1.221, 0.01);
    let t06 = calibrate_theta_c(0.6, 2.0, &RngStream::new(SEED, 18), 8_000_000).unwrap();
    gate.within("theta_c at rho=0.6", t06, 1.289, 0.01);

    // marginal OR and RD at rho=0.3
    let cfg3 = ScenarioConfig::preset(3, SEED, 1).unwrap();
    let truth = truth_for(&cfg3, 8_000_000).unwrap();
    gate.within("marginal OR at rho=0.3", truth.log_or.exp(), 2.894, 0.02);
    gate.within("marginal RD at rho=0.3", truth.rd, 0.236, 0.003);

    gate.finish();
}

/// KNOWN RED. The treated fraction implied by the treatment model. The
/// documented design target of 0.30 matches the logistic evaluated at the
/// covariate means, expit(-0.85) = 0.2995, not the population average of the
/// logistic; with the coefficients as specified the generator's actual mean
/// is ~0.34 at rho=0.3 (and ~0.35 at rho=0.6), and every downstream target
/// in the other criteria reproduces only under these coefficients. The
/// 0.30 ± 0.005 gate is therefore unattainable with a correct generator and
/// is kept here, failing, as a record of the discrepancy.
#[test]
fn criterion_2_mean_treated_fraction_known_discrepancy() {
    let mut gate = Gate::new("criterion 2 (mean treated fraction)");
    for scenario in [3u8, 7] {
        let mut cfg = ScenarioConfig::preset(scenario, SEED, 1).unwrap();
        cfg.n = 1_000_000;
        let (pre, _) = generate(&cfg, &RngStream::new(SEED, 23 + scenario as u64)).unwrap();
        let mean_z = pre.z.values().iter().sum::<f64>() / pre.n() as f64;
        let at_mean = expit(
            TREATMENT_COEFS[0] + TREATMENT_COEFS[3] * 0.5, // covariate means are (0, 0, 0.5)
        );
        gate.within(
            &format!(
                "mean(Z) at rho={} (logistic at covariate means = {at_mean:.4})",
                cfg.rho
            ),
            mean_z,
            0.30,
            0.005,
        );
    }
    gate.finish();
}

#[test]
fn criterion_3_scenario7_bias_and_coverage() {
    let run = scenario7();
    let mut gate = Gate::new("criterion 3 (scenario 7 desk scale)");
    gate.check(
        run.summary.failures.is_empty(),
        "replication failures",
        format!("{} failures", run.summary.failures.len()),
    );
    gate.within("Full log-RR bias", bias(run, Strategy::Full), 0.002, 0.015);
    gate.within("CC log-RR bias", bias(run, Strategy::Cc), 0.141, 0.025);
    gate.within("MP log-RR bias", bias(run, Strategy::Mp), 0.130, 0.025);
    gate.within("MIte log-RR bias", bias(run, Strategy::Mite), 0.005, 0.015);
    gate.within("MIps log-RR bias", bias(run, Strategy::Mips), 0.028, 0.015);
    gate.within(
        "MIpar log-RR bias",
        bias(run, Strategy::Mipar),
        0.017,
        0.015,
    );
    gate.within("MIte coverage", coverage(run, Strategy::Mite), 0.957, 0.025);
    gate.within(
        "MIpar coverage",
        coverage(run, Strategy::Mipar),
        0.942,
        0.025,
    );

    let mite = run
        .summary
        .cell(Strategy::Mite, EffectMeasure::LogRr)
        .unwrap();
    let emp = mite.empirical_variance.unwrap();
    let ratio = mite.mean_variance / emp;
    gate.check(
        (ratio - 1.0).abs() <= 0.30,
        "MIte model variance vs empirical",
        format!(
            "mean model {:.4}, empirical {:.4}, ratio {ratio:.3}",
            mite.mean_variance, emp
        ),
    );

    // sanity anchor for the confounded reference
    gate.within(
        "Crude log-RR bias (anchor)",
        bias(run, Strategy::Crude),
        0.529,
        0.02,
    );

    // complete-case sample size and coverage anchors
    let cc = run.summary.cell(Strategy::Cc, EffectMeasure::LogRr).unwrap();
    gate.within("CC mean analyzed n", cc.mean_n_used, 1074.0, 25.0);
    gate.within("CC coverage", cc.coverage, 0.769, 0.04);

    // bias ordering of the missing-data strategies on the 500-rep means
    let (b_mite, b_mipar, b_mips) = (
        bias(run, Strategy::Mite).abs(),
        bias(run, Strategy::Mipar).abs(),
        bias(run, Strategy::Mips).abs(),
    );
    let (b_mp, b_cc) = (bias(run, Strategy::Mp).abs(), bias(run, Strategy::Cc).abs());
    gate.check(
        b_mite < b_mipar && b_mipar < b_mips && b_mips < b_mp && b_mips < b_cc,
        "bias ordering",
        format!(
            "MIte {b_mite:.4} < MIpar {b_mipar:.4} < MIps {b_mips:.4} < MP {b_mp:.4}, CC {b_cc:.4}"
        ),
    );
    gate.finish();
}

#[test]
fn criterion_4_outcome_exclusion_bias() {
    let cfg = ScenarioConfig::preset(15, SEED, DESK_REPS).unwrap();
    let run = run_scenario_with(&cfg, &[Strategy::Mite], false).unwrap();
    let mut gate = Gate::new("criterion 4 (outcome excluded from imputation)");
    let b15 = bias(&run, Strategy::Mite);
    gate.within("MIte log-RR bias, outcome excluded", b15, 0.048, 0.02);
    let b7 = bias(scenario7(), Strategy::Mite);
    gate.check(
        b15 > b7,
        "bias exceeds outcome-included run",
        format!("{b15:.4} > {b7:.4}"),
    );
    gate.finish();
}

#[test]
fn criterion_5_missingness_rate_sweep() {
    let mut gate = Gate::new("criterion 5 (missingness rate sweep)");
    let mi_only = [Strategy::Mite, Strategy::Mips, Strategy::Mipar];

    let cfg10 = ScenarioConfig::preset(7, SEED, DESK_REPS)
        .unwrap()
        .with_variant(Variant::Rate10, 1_000_000)
        .unwrap();
    let run10 = run_scenario_with(&cfg10, &mi_only, false).unwrap();
    for strategy in mi_only {
        let b = bias(&run10, strategy);
        gate.check(
            b.abs() <= 0.02,
            &format!("{} bias at 10% missing", strategy.label()),
            format!("{b:.4} (|bias| <= 0.02)"),
        );
    }

    let cfg60 = ScenarioConfig::preset(7, SEED, DESK_REPS)
        .unwrap()
        .with_variant(Variant::Rate60, 1_000_000)
        .unwrap();
    let run60 = run_scenario_with(&cfg60, &mi_only, false).unwrap();
    gate.within(
        "MIte bias at 60% missing",
        bias(&run60, Strategy::Mite),
        0.010,
        0.02,
    );
    let mips60 = bias(&run60, Strategy::Mips);
    gate.check(
        mips60 >= 0.04,
        "MIps bias at 60% missing",
        format!("{mips60:.4} (>= 0.04)"),
    );
    gate.finish();
}

#[test]
fn criterion_6_balance_grid() {
    let mut gate = Gate::new("criterion 6 (balance grid)");

    // The published crude imbalance triple corresponds to the rho=0.3 grid
    // (at rho=0.6 the same quantities are near (102, 98, 79)); the weighted
    // views match the rho=0.6 scenario. Each sub-check runs under the
    // configuration its target reproduces.
    let cfg3 = ScenarioConfig::preset(3, SEED, DESK_REPS).unwrap();
    let crude_run = run_scenario_with(&cfg3, &[Strategy::Crude], true).unwrap();
    for (name, want) in [("x1", 81.3), ("x2", 74.7), ("x3", 51.7)] {
        let cell = crude_run
            .summary
            .balance_cell(Strategy::Crude, BalanceView::Crude, name)
            .expect("crude balance cell");
        gate.within(&format!("crude SDiff {name}"), cell.mean_sdiff, want, 3.0);
    }

    let run = scenario7();
    for name in ["x1", "x2", "x3"] {
        let cell = run
            .summary
            .balance_cell(Strategy::Mite, BalanceView::WeightedPerImputation, name)
            .expect("per-imputation balance cell");
        gate.check(
            cell.mean_sdiff <= 6.0,
            &format!("MIte per-imputation SDiff {name}"),
            format!("{:.2} (<= 6)", cell.mean_sdiff),
        );
    }
    let imputed_x1 = run
        .summary
        .balance_cell(Strategy::Mips, BalanceView::ImputedPart, "x1")
        .expect("imputed-part balance cell");
    gate.within(
        "MIps imputed-part SDiff x1",
        imputed_x1.mean_sdiff,
        58.0,
        5.0,
    );
    gate.check(
        run.summary
            .balance_cell(Strategy::Mips, BalanceView::ImputedPart, "x2")
            .is_none(),
        "no imputed-part entry for the fully observed covariate",
        "x2 absent".to_string(),
    );
    gate.finish();
}

#[test]
fn criterion_7a_ps_correction_bounded_on_random_fixtures() {
    let mut gate = Gate::new("criterion 7a (V_PS <= V_un on 1000 fixtures)");
    let mut rng = RngStream::new(SEED, 31).rng();
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = 30 + rng.gen_range(0..40);
        let p = 2 + rng.gen_range(0..3);
        let mut design = DMatrix::zeros(n, p);
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            design[(i, 0)] = 1.0;
            for j in 1..p {
                design[(i, j)] = rng.gen::<f64>() * 2.0 - 1.0;
            }
            y.push(f64::from(rng.gen::<f64>() < 0.4));
            z.push(f64::from(i % 2 == 0));
            scores.push(0.05 + 0.9 * rng.gen::<f64>());
        }
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen::<f64>() - 0.5);
        let cov = CovMatrix::from_matrix(&a * a.transpose()).unwrap();
        let mm = iptw::iptw_means(&y, &z, &scores).unwrap();
        for measure in EffectMeasure::ALL {
            let v_un = iptw::var_uncorrected(&y, &z, &scores, mm.mu1, mm.mu0, measure).unwrap();
            let v_ps =
                iptw::var_ps_corrected(&y, &z, &design, &scores, &cov, mm.mu1, mm.mu0, measure)
                    .unwrap();
            worst = worst.max(v_ps.value - v_un);
        }
    }
    gate.check(worst <= 1e-12, "max(V_PS - V_un)", format!("{worst:.3e}"));
    gate.finish();
}

#[test]
fn criterion_7b_rubin_pooling_degenerate_case() {
    let mut gate = Gate::new("criterion 7b (Rubin pooling with identical estimates)");
    let (pooled, var) = rubin_pool(&[0.37; 10], &[0.004; 10]).unwrap();
    gate.check(
        (pooled - 0.37).abs() < 1e-15 && (var - 0.004).abs() < 1e-15,
        "pooled variance equals mean within",
        format!("pooled {pooled}, variance {var}"),
    );
    gate.finish();
}

#[test]
fn criterion_7c_true_ps_weighting_balances_at_scale() {
    let mut gate = Gate::new("criterion 7c (true-PS weighted SDiff < 2% at n=1e5)");
    let mut cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    cfg.n = 100_000;
    let (pre, _) = generate(&cfg, &RngStream::new(SEED, 37)).unwrap();
    let z = pre.z.values();
    let true_scores: Vec<f64> = (0..pre.n())
        .map(|i| {
            expit(
                TREATMENT_COEFS[0]
                    + TREATMENT_COEFS[1] * pre.covariate("x1").unwrap().values()[i]
                    + TREATMENT_COEFS[2] * pre.covariate("x2").unwrap().values()[i]
                    + TREATMENT_COEFS[3] * pre.covariate("x3").unwrap().values()[i],
            )
        })
        .collect();
    let w = weights_from_scores(z, &true_scores);
    for c in &pre.covariates {
        let sd = match c.kind {
            iptw_mi::mice::ColumnKind::Continuous => sdiff_continuous(c.values(), z, Some(&w)),
            iptw_mi::mice::ColumnKind::Binary => sdiff_binary(c.values(), z, Some(&w)),
        };
        gate.check(
            sd < 2.0,
            &format!("weighted SDiff {}", c.name),
            format!("{sd:.3}%"),
        );
    }
    gate.finish();
}

/// Direct Newton iteration on the Bernoulli log-likelihood, written
/// independently of the IRLS implementation (dense solves, no step control).
fn newton_logistic_oracle(design: &DMatrix<f64>, y: &[f64]) -> nalgebra::DVector<f64> {
    let p = design.ncols();
    let mut beta = nalgebra::DVector::<f64>::zeros(p);
    for _ in 0..200 {
        let eta = design * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| 1.0 / (1.0 + (-e).exp())).collect();
        let mut grad = nalgebra::DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..design.nrows() {
            let r = y[i] - probs[i];
            let w = probs[i] * (1.0 - probs[i]);
            for a in 0..p {
                grad[a] += design[(i, a)] * r;
                for b in 0..p {
                    hess[(a, b)] += design[(i, a)] * design[(i, b)] * w;
                }
            }
        }
        if grad.amax() < 1e-12 {
            break;
        }
        let step = hess.lu().solve(&grad).expect("oracle solve");
        beta += step;
    }
    beta
}

#[test]
fn criterion_7d_logistic_mle_matches_newton_oracle() {
    let mut gate = Gate::new("criterion 7d (logistic MLE vs Newton oracle, 100 problems)");
    let mut rng = RngStream::new(SEED, 41).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 200;
        let p = 3;
        let mut design = DMatrix::zeros(n, p);
        let mut y = Vec::with_capacity(n);
        let b_true: Vec<f64> = (0..p).map(|_| rng.gen::<f64>() - 0.5).collect();
        for i in 0..n {
            design[(i, 0)] = 1.0;
            for j in 1..p {
                design[(i, j)] = rng.gen::<f64>() * 2.0 - 1.0;
            }
            let eta: f64 = (0..p).map(|j| design[(i, j)] * b_true[j]).sum();
            y.push(f64::from(rng.gen::<f64>() < expit(eta)));
        }
        let fit = fit_logistic(&design, &y).unwrap();
        let oracle_beta = newton_logistic_oracle(&design, &y);
        worst = worst.max((&fit.coefficients - &oracle_beta).amax());
    }
    gate.check(worst < 1e-6, "max |IRLS - Newton|", format!("{worst:.2e}"));
    gate.finish();
}

#[test]
fn criterion_7e_observed_cells_bit_identical() {
    let mut gate = Gate::new("criterion 7e (observed cells bit-identical across imputations)");
    let mut cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    cfg.n = 1500;
    let (_, post) = generate(&cfg, &RngStream::new(SEED, 43)).unwrap();
    let set = impute(
        &post,
        &ImputationConfig {
            m: 5,
            cycles: 5,
            ..ImputationConfig::new(RngStream::new(SEED, 44))
        },
    )
    .unwrap();
    let mut mismatches = 0usize;
    for completed in &set.completed {
        for (orig, comp) in post.covariates.iter().zip(&completed.covariates) {
            for i in 0..post.n() {
                if !orig.is_missing(i) && orig.values()[i].to_bits() != comp.values()[i].to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    gate.check(
        mismatches == 0,
        "modified observed cells",
        format!("{mismatches}"),
    );
    gate.finish();
}

#[test]
fn criterion_7f_manifest_rerun_is_byte_identical() {
    let mut gate = Gate::new("criterion 7f (byte-identical rerun from manifest)");
    let mut cfg = ScenarioConfig::preset(7, SEED, 8).unwrap();
    cfg.n = 400;
    cfg.m = 3;
    cfg.cycles = 3;

    let dir = tempfile::tempdir().unwrap();
    let first = run_scenario(&cfg).unwrap();
    iptw_mi::harness::emit_tables(&first, dir.path()).unwrap();
    let reloaded = iptw_mi::harness::load_config(&dir.path().join("manifest.json")).unwrap();
    let second = run_scenario(&reloaded).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    iptw_mi::harness::emit_tables(&second, dir2.path()).unwrap();

    for file in ["summary.csv", "balance.csv", "replications.csv"] {
        let a = std::fs::read(dir.path().join(file)).unwrap();
        let b = std::fs::read(dir2.path().join(file)).unwrap();
        gate.check(a == b, file, format!("{} bytes", a.len()));
    }
    gate.finish();
}

#[test]
fn criterion_8_small_sample_variant() {
    let cfg = ScenarioConfig::preset(7, SEED, DESK_REPS)
        .unwrap()
        .with_variant(Variant::N500, 1_000_000)
        .unwrap();
    let run = run_scenario_with(&cfg, &[Strategy::Cc, Strategy::Mite], false).unwrap();
    let mut gate = Gate::new("criterion 8 (n=500 variant)");
    let mite_cov = coverage(&run, Strategy::Mite);
    gate.check(
        mite_cov >= 0.93,
        "MIte coverage",
        format!("{mite_cov:.3} (>= 0.93)"),
    );
    let cc_cov = coverage(&run, Strategy::Cc);
    gate.check(
        cc_cov < mite_cov,
        "CC coverage below MIte",
        format!("{cc_cov:.3} < {mite_cov:.3}"),
    );
    gate.finish();
}

#[test]
fn supporting_logistic_recovery_within_three_se() {
    // each coefficient recovered within 3 SEs in at least 99% of 1000 fits
    // (the all-four-jointly rate has expectation 0.9973^4 ≈ 0.989, so the
    // 99% bar applies per coefficient)
    let mut gate = Gate::new("supporting (logistic recovery within 3 SE)");
    let alpha = [
        TREATMENT_COEFS[0],
        TREATMENT_COEFS[1],
        TREATMENT_COEFS[2],
        TREATMENT_COEFS[3],
    ];
    let mut hits = 0usize;
    let mut checks = 0usize;
    let total = 1000usize;
    for rep in 0..total {
        let stream = RngStream::new(SEED, 100_000 + rep as u64);
        let mut rng = stream.rng();
        let n = 2000;
        let mut design = DMatrix::zeros(n, 4);
        let mut z = Vec::with_capacity(n);
        let draws = mvn_sample(&stream.substream(1), n, 0.3).unwrap();
        for i in 0..n {
            design[(i, 0)] = 1.0;
            design[(i, 1)] = draws[(i, 0)];
            design[(i, 2)] = draws[(i, 1)];
            design[(i, 3)] = if draws[(i, 2)] > 0.0 { 1.0 } else { 0.0 };
            let eta: f64 = (0..4).map(|j| design[(i, j)] * alpha[j]).sum();
            z.push(f64::from(rng.gen::<f64>() < expit(eta)));
        }
        let fit = fit_logistic(&design, &z).unwrap();
        for (j, &truth) in alpha.iter().enumerate() {
            let se = fit.covariance.as_matrix()[(j, j)].sqrt();
            hits += usize::from((fit.coefficients[j] - truth).abs() <= 3.0 * se);
            checks += 1;
        }
    }
    let rate = hits as f64 / checks as f64;
    gate.check(
        rate >= 0.99,
        "per-coefficient recovery rate",
        format!("{rate:.4}"),
    );
    gate.finish();
}

#[test]
fn supporting_uncorrected_variance_anchor() {
    // mean uncorrected variance of the full-data log-RR near 0.008
    let mut gate = Gate::new("supporting (uncorrected variance anchor)");
    let cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    let reps = 200;
    let mut acc = 0.0;
    for rep in 0..reps {
        let (pre, _) = generate(&cfg, &RngStream::new(SEED, 200_000 + rep)).unwrap();
        let design = pre.design_matrix(None).unwrap();
        let ps = iptw::estimate_ps(&design, pre.z.values()).unwrap();
        let mm = iptw::iptw_means(pre.y.values(), pre.z.values(), &ps.scores).unwrap();
        acc += iptw::var_uncorrected(
            pre.y.values(),
            pre.z.values(),
            &ps.scores,
            mm.mu1,
            mm.mu0,
            EffectMeasure::LogRr,
        )
        .unwrap();
    }
    let mean_v_un = acc / reps as f64;
    gate.within("mean V_un (full data, log RR)", mean_v_un, 0.008, 0.0015);
    gate.finish();
}

#[test]
fn supporting_variance_flavor_anchors_scenario7() {
    // Full PS-corrected and MIpar pooled variances track the empirical
    // variance (published means are 0.006 at this design point)
    let run = scenario7();
    let mut gate = Gate::new("supporting (variance anchors in scenario 7)");
    for strategy in [Strategy::Full, Strategy::Mipar, Strategy::Mips] {
        let cell = run.summary.cell(strategy, EffectMeasure::LogRr).unwrap();
        gate.within(
            &format!("{} mean model variance", strategy.label()),
            cell.mean_variance,
            0.006,
            0.0015,
        );
        let emp = cell.empirical_variance.unwrap();
        gate.check(
            (cell.mean_variance / emp - 1.0).abs() < 0.35,
            &format!("{} model vs empirical", strategy.label()),
            format!("model {:.4} vs empirical {emp:.4}", cell.mean_variance),
        );
    }
    gate.finish();
}

#[test]
fn supporting_cc_nearly_unbiased_when_outcome_unrelated_to_missingness_under_null() {
    // gamma_Y = 0 and null effect: complete-case analysis is approximately
    // unbiased even though missingness depends on treatment and x2; the
    // full-data estimator is unbiased there as well
    let mut cfg = ScenarioConfig::preset(6, SEED, 300).unwrap();
    cfg.n = 2000;
    let run = run_scenario_with(&cfg, &[Strategy::Full, Strategy::Cc], false).unwrap();
    let mut gate = Gate::new("supporting (CC near-unbiased, MAR free of outcome, null effect)");
    let b = bias(&run, Strategy::Cc);
    gate.check(b.abs() < 0.04, "CC log-RR bias", format!("{b:.4}"));
    let bf = bias(&run, Strategy::Full);
    gate.check(bf.abs() < 0.015, "Full log-RR bias under the null", format!("{bf:.4}"));
    gate.finish();
}

#[test]
fn supporting_ps_coefficients_recovered_at_scale() {
    // the fitted propensity coefficients reproduce the generating treatment
    // model at n = 1e6
    let mut gate = Gate::new("supporting (PS coefficients at n=1e6)");
    let mut cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    cfg.n = 1_000_000;
    let (pre, _) = generate(&cfg, &RngStream::new(SEED, 61)).unwrap();
    let design = pre.design_matrix(None).unwrap();
    let ps = iptw::estimate_ps(&design, pre.z.values()).unwrap();
    for (j, &want) in TREATMENT_COEFS.iter().enumerate() {
        gate.within(&format!("alpha[{j}]"), ps.alpha[j], want, 0.01);
    }
    gate.finish();
}

#[test]
fn supporting_true_ps_weighting_recovers_null_effect_at_scale() {
    // null scenario, true scores: the weighted means coincide within 0.005
    let mut gate = Gate::new("supporting (true-PS null effect at n=1e6)");
    let mut cfg = ScenarioConfig::preset(5, SEED, 1).unwrap(); // RR=1, rho=0.6
    cfg.n = 1_000_000;
    let (pre, post) = generate(&cfg, &RngStream::new(SEED, 62)).unwrap();
    let true_scores: Vec<f64> = (0..pre.n())
        .map(|i| {
            expit(
                TREATMENT_COEFS[0]
                    + TREATMENT_COEFS[1] * pre.covariate("x1").unwrap().values()[i]
                    + TREATMENT_COEFS[2] * pre.covariate("x2").unwrap().values()[i]
                    + TREATMENT_COEFS[3] * pre.covariate("x3").unwrap().values()[i],
            )
        })
        .collect();
    let mm = iptw::iptw_means(pre.y.values(), pre.z.values(), &true_scores).unwrap();
    gate.check(
        (mm.mu1 - mm.mu0).abs() < 0.005,
        "mu1 - mu0",
        format!("{:.5}", mm.mu1 - mm.mu0),
    );
    // at most four covariate missingness patterns with two masked columns
    let summary = iptw_mi::mice::missingness_summary(&post);
    gate.check(
        summary.patterns.len() <= 4,
        "pattern count",
        format!("{}", summary.patterns.len()),
    );
    gate.finish();
}

#[test]
fn supporting_missing_outcome_and_treatment_variant() {
    // 30% of the outcome and treatment additionally deleted completely at
    // random: pooled-effect imputation stays unbiased, complete case does not
    let cfg = ScenarioConfig::preset(7, SEED, 150)
        .unwrap()
        .with_variant(Variant::MissYzMcar, 1_000_000)
        .unwrap();
    let run = run_scenario_with(&cfg, &[Strategy::Cc, Strategy::Mite], false).unwrap();
    let mut gate = Gate::new("supporting (missing outcome/treatment variant)");
    gate.check(
        run.summary.failures.is_empty(),
        "replication failures",
        format!("{}", run.summary.failures.len()),
    );
    let b_mite = bias(&run, Strategy::Mite);
    gate.check(b_mite.abs() <= 0.03, "MIte log-RR bias", format!("{b_mite:.4}"));
    let b_cc = bias(&run, Strategy::Cc);
    gate.check(b_cc > 0.1, "CC log-RR bias stays large", format!("{b_cc:.4}"));
    // complete rows require x1, x3, y and z all observed:
    // E[n] = 2000 * 0.537 * 0.7^2 ≈ 527
    let cc = run.summary.cell(Strategy::Cc, EffectMeasure::LogRr).unwrap();
    gate.within("CC mean analyzed n", cc.mean_n_used, 527.0, 40.0);
    gate.finish();
}

#[test]
fn supporting_imputed_x1_matches_predeletion_distribution() {
    // pooled imputed x1 values track the pre-deletion values at the masked
    // cells: mean within 0.02, variance within 5% (n=2000, M=10 per
    // replication; pooled over replications so the Monte Carlo error of the
    // truth-side moments does not dominate the thresholds)
    let mut gate = Gate::new("supporting (imputed x1 distribution)");
    let cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    let mut truth = Vec::new();
    let mut imputed = Vec::new();
    for rep in 0..10u64 {
        let (pre, post) = generate(&cfg, &RngStream::new(SEED, 51 + 10 * rep)).unwrap();
        let set = impute(
            &post,
            &ImputationConfig::new(RngStream::new(SEED, 52 + 10 * rep)),
        )
        .unwrap();
        let x1 = post.covariate("x1").unwrap();
        for i in 0..post.n() {
            if x1.is_missing(i) {
                truth.push(pre.covariate("x1").unwrap().values()[i]);
                for completed in &set.completed {
                    imputed.push(completed.covariate("x1").unwrap().values()[i]);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var =
        |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let (mt, mi) = (mean(&truth), mean(&imputed));
    let (vt, vi) = (var(&truth, mt), var(&imputed, mi));
    gate.check(
        (mi - mt).abs() < 0.02,
        "mean gap",
        format!("|{mi:.4} - {mt:.4}| = {:.4}", (mi - mt).abs()),
    );
    gate.check(
        (vi / vt - 1.0).abs() < 0.05,
        "variance ratio",
        format!("{vi:.4} / {vt:.4} = {:.4}", vi / vt),
    );
    gate.finish();
}

#[test]
fn supporting_mi_interval_narrower_than_cc_on_fixture_suite() {
    // pooled-imputation analysis uses the partially observed rows, so its
    // log-RR interval should beat complete-case width on nearly all fixtures
    let mut gate = Gate::new("supporting (MIte CI narrower than CC)");
    let mut cfg = ScenarioConfig::preset(7, SEED, 1).unwrap();
    cfg.n = 1200;
    cfg.m = 5;
    cfg.cycles = 5;
    let total = 20;
    let mut narrower = 0usize;
    for rep in 0..total {
        let (_, post) = generate(&cfg, &RngStream::new(SEED, 300_000 + rep)).unwrap();
        let cc = iptw_mi::strategies::analyze_cc(&post, 50).unwrap();
        let imp_cfg = ImputationConfig {
            m: cfg.m,
            cycles: cfg.cycles,
            ..ImputationConfig::new(RngStream::new(SEED, 310_000 + rep))
        };
        let mite = iptw_mi::strategies::analyze_mite(&post, &imp_cfg).unwrap();
        let width = |r: &iptw_mi::strategies::StrategyResult| {
            let e = r.estimate(EffectMeasure::LogRr);
            e.ci_high - e.ci_low
        };
        if width(&mite) < width(&cc) {
            narrower += 1;
        }
    }
    let rate = narrower as f64 / total as f64;
    gate.check(rate >= 0.9, "fraction narrower", format!("{rate:.2}"));
    gate.finish();
}
