//! Data-generating process for the simulation study and its calibration
//! oracles.
//!
//! Covariates are drawn from N₃(0, Σ(ρ)) with the third component
//! dichotomized at zero (strictly: value 1 iff the latent draw is > 0).
//! Treatment follows logit(P(Z=1|x)) = −1.15 + 0.7x₁ + 0.6x₂ + 0.6x₃ and the
//! binary outcome logit(P(Y=1|z,x)) = −1.5 + 0.5x₁ + 0.5x₂ + 0.3x₃ + θ_c z,
//! with θ_c calibrated so that the marginal relative risk hits its target.
//! Missingness for x₁ and x₃ is imposed independently from
//! logit(P(R=1)) = γ₀ + z + x₂ + γ_Y y.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mice::{bernoulli, Column, Dataset};
use crate::numstat::{expit, mvn_sample_rng, RngStream};

pub const TREATMENT_COEFS: [f64; 4] = [-1.15, 0.7, 0.6, 0.6];
pub const OUTCOME_COEFS: [f64; 4] = [-1.5, 0.5, 0.5, 0.3];

/// θ_c values printed for the marginal relative risk of 2.
pub const THETA_C_RR2_RHO03: f64 = 1.221;
pub const THETA_C_RR2_RHO06: f64 = 1.289;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Base,
    /// Also delete 30% of the outcome and treatment completely at random.
    MissYzMcar,
    /// Missingness rate retargeted to 10%.
    Rate10,
    /// Missingness rate retargeted to 60%.
    Rate60,
    /// Sample size 500.
    N500,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "miss_yz_mcar" => Ok(Variant::MissYzMcar),
            "rate10" => Ok(Variant::Rate10),
            "rate60" => Ok(Variant::Rate60),
            "n500" => Ok(Variant::N500),
            other => Err(Error::Input(format!("unknown variant '{other}'"))),
        }
    }
}

fn default_n() -> usize {
    2000
}
fn default_missing_rate() -> f64 {
    0.30
}
fn default_true() -> bool {
    true
}
fn default_m() -> usize {
    10
}
fn default_cycles() -> usize {
    10
}

/// One simulation scenario. Serializes to/from JSON; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    /// Pairwise latent correlation of the covariates.
    pub rho: f64,
    /// Target marginal relative risk (1 or 2 in the study design).
    pub target_rr: f64,
    /// Resolved conditional log odds ratio of treatment in the outcome model.
    pub theta_c: f64,
    /// Outcome coefficient in the missingness model.
    pub gamma_y: f64,
    /// Intercept of the missingness model.
    pub gamma_0: f64,
    #[serde(default = "default_missing_rate")]
    pub missing_rate_target: f64,
    #[serde(default = "default_true")]
    pub include_outcome: bool,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
}

impl ScenarioConfig {
    /// The sixteen-scenario grid: scenarios 1–8 include the outcome in the
    /// imputation model, 9–16 exclude it; within each block the factors are
    /// (target RR ∈ {1,2}) × (ρ ∈ {0.3, 0.6}) × (outcome predicts
    /// missingness or not), numbered so that e.g. scenario 7 is RR=2, ρ=0.6
    /// with the outcome predicting missingness.
    pub fn preset(scenario: u8, seed: u64, reps: usize) -> Result<ScenarioConfig> {
        if !(1..=16).contains(&scenario) {
            return Err(Error::Parameter(format!(
                "scenario must be 1..=16, got {scenario}"
            )));
        }
        let idx = (scenario - 1) % 8;
        let include_outcome = scenario <= 8;
        let target_rr = if (idx / 2).is_multiple_of(2) {
            1.0
        } else {
            2.0
        };
        let rho = if idx < 4 { 0.3 } else { 0.6 };
        let outcome_predicts = idx.is_multiple_of(2);
        let theta_c = if target_rr == 1.0 {
            0.0
        } else if rho == 0.3 {
            THETA_C_RR2_RHO03
        } else {
            THETA_C_RR2_RHO06
        };
        let (gamma_y, gamma_0) = if outcome_predicts {
            (-0.4, -1.3)
        } else {
            (0.0, -1.5)
        };
        Ok(ScenarioConfig {
            n: default_n(),
            rho,
            target_rr,
            theta_c,
            gamma_y,
            gamma_0,
            missing_rate_target: 0.30,
            include_outcome,
            m: default_m(),
            cycles: default_cycles(),
            reps,
            seed,
            variant: Variant::Base,
        })
    }

    /// Apply a design variant, re-solving the missingness intercept when the
    /// target rate changes.
    pub fn with_variant(mut self, variant: Variant, n_mc: usize) -> Result<ScenarioConfig> {
        self.variant = variant;
        match variant {
            Variant::Base | Variant::MissYzMcar => {}
            Variant::N500 => self.n = 500,
            Variant::Rate10 | Variant::Rate60 => {
                let rate = if variant == Variant::Rate10 {
                    0.10
                } else {
                    0.60
                };
                self.missing_rate_target = rate;
                let stream = RngStream::new(self.seed, 0).substream(u64::MAX - 2);
                self.gamma_0 =
                    solve_gamma0(rate, self.gamma_y, self.rho, self.theta_c, &stream, n_mc)?;
            }
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Parameter("scenario n must be at least 10".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Parameter(format!("rho {} outside [0,1)", self.rho)));
        }
        if self.target_rr < 1.0 {
            return Err(Error::Parameter("target relative risk must be >= 1".into()));
        }
        Ok(())
    }
}

/// True marginal effects implied by a calibrated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub log_rr: f64,
    pub log_or: f64,
    pub rd: f64,
}

impl ScenarioTruth {
    pub fn for_measure(&self, measure: crate::iptw::EffectMeasure) -> f64 {
        match measure {
            crate::iptw::EffectMeasure::LogRr => self.log_rr,
            crate::iptw::EffectMeasure::LogOr => self.log_or,
            crate::iptw::EffectMeasure::Rd => self.rd,
        }
    }
}

struct RawDraws {
    x1: Vec<f64>,
    x2: Vec<f64>,
    x3: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

fn draw_population(
    cfg: &ScenarioConfig,
    rng: &mut rand_chacha::ChaCha12Rng,
    n: usize,
) -> Result<RawDraws> {
    let x = mvn_sample_rng(rng, n, cfg.rho)?;
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut x3 = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a = x[(i, 0)];
        let b = x[(i, 1)];
        let c = if x[(i, 2)] > 0.0 { 1.0 } else { 0.0 };
        let pz = expit(
            TREATMENT_COEFS[0]
                + TREATMENT_COEFS[1] * a
                + TREATMENT_COEFS[2] * b
                + TREATMENT_COEFS[3] * c,
        );
        let zi = bernoulli(rng, pz);
        let py = expit(
            OUTCOME_COEFS[0]
                + OUTCOME_COEFS[1] * a
                + OUTCOME_COEFS[2] * b
                + OUTCOME_COEFS[3] * c
                + cfg.theta_c * zi,
        );
        let yi = bernoulli(rng, py);
        x1.push(a);
        x2.push(b);
        x3.push(c);
        z.push(zi);
        y.push(yi);
    }
    Ok(RawDraws { x1, x2, x3, z, y })
}

/// Generate one replication: the pre-deletion dataset and its post-deletion
/// copy with missingness imposed.
pub fn generate(cfg: &ScenarioConfig, stream: &RngStream) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = stream.rng();
    let n = cfg.n;
    let raw = draw_population(cfg, &mut rng, n)?;

    let mut r1 = vec![false; n];
    let mut r3 = vec![false; n];
    for i in 0..n {
        let pr = expit(cfg.gamma_0 + raw.z[i] + raw.x2[i] + cfg.gamma_y * raw.y[i]);
        r1[i] = bernoulli(&mut rng, pr) == 1.0;
        r3[i] = bernoulli(&mut rng, pr) == 1.0;
    }
    let (mut ry, mut rz) = (vec![false; n], vec![false; n]);
    if cfg.variant == Variant::MissYzMcar {
        for i in 0..n {
            ry[i] = bernoulli(&mut rng, 0.30) == 1.0;
            rz[i] = bernoulli(&mut rng, 0.30) == 1.0;
        }
    }

    let none = vec![false; n];
    let pre = Dataset::new(
        Column::binary("y", raw.y.clone(), none.clone())?,
        Column::binary("z", raw.z.clone(), none.clone())?,
        vec![
            Column::continuous("x1", raw.x1.clone(), none.clone())?,
            Column::continuous("x2", raw.x2.clone(), none.clone())?,
            Column::binary("x3", raw.x3.clone(), none.clone())?,
        ],
    )?;
    let post = Dataset::new(
        Column::binary("y", raw.y, ry)?,
        Column::binary("z", raw.z, rz)?,
        vec![
            Column::continuous("x1", raw.x1, r1)?,
            Column::continuous("x2", raw.x2, none.clone())?,
            Column::binary("x3", raw.x3, r3)?,
        ],
    )?;
    Ok((pre, post))
}

fn outcome_linear_predictors(rho: f64, stream: &RngStream, n_mc: usize) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    let mut lin = Vec::with_capacity(n_mc);
    const BATCH: usize = 65_536;
    let mut left = n_mc;
    while left > 0 {
        let take = left.min(BATCH);
        let x: DMatrix<f64> = mvn_sample_rng(&mut rng, take, rho)?;
        for i in 0..take {
            let c = if x[(i, 2)] > 0.0 { 1.0 } else { 0.0 };
            lin.push(
                OUTCOME_COEFS[0]
                    + OUTCOME_COEFS[1] * x[(i, 0)]
                    + OUTCOME_COEFS[2] * x[(i, 1)]
                    + OUTCOME_COEFS[3] * c,
            );
        }
        left -= take;
    }
    Ok(lin)
}

fn marginal_means(lin: &[f64], theta: f64) -> (f64, f64) {
    let n = lin.len() as f64;
    let mut mu1 = 0.0;
    let mut mu0 = 0.0;
    for &l in lin {
        mu1 += expit(l + theta);
        mu0 += expit(l);
    }
    (mu1 / n, mu0 / n)
}

/// Solve for the conditional effect θ_c whose marginal relative risk equals
/// `target_rr`, by bisection over a Monte Carlo draw of the covariate
/// distribution (common draws across the bracket).
pub fn calibrate_theta_c(rho: f64, target_rr: f64, stream: &RngStream, n_mc: usize) -> Result<f64> {
    if target_rr < 1.0 {
        return Err(Error::Parameter("target relative risk must be >= 1".into()));
    }
    if target_rr == 1.0 {
        return Ok(0.0);
    }
    let lin = outcome_linear_predictors(rho, stream, n_mc)?;
    let rr_at = |theta: f64| {
        let (mu1, mu0) = marginal_means(&lin, theta);
        mu1 / mu0
    };
    let mut lo = 0.0;
    let mut hi = 6.0;
    if rr_at(hi) < target_rr {
        return Err(Error::Parameter(format!(
            "bracket failure: marginal RR at theta=6 is below target {target_rr}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rr = rr_at(mid);
        if (rr - target_rr).abs() < 1e-3 {
            return Ok(mid);
        }
        if rr < target_rr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo evaluation of the true marginal effects for a configuration.
/// The RR=1 case is exact.
pub fn truth_for(cfg: &ScenarioConfig, n_mc: usize) -> Result<ScenarioTruth> {
    if cfg.target_rr == 1.0 && cfg.theta_c == 0.0 {
        return Ok(ScenarioTruth {
            log_rr: 0.0,
            log_or: 0.0,
            rd: 0.0,
        });
    }
    let stream = RngStream::new(cfg.seed, 0).substream(u64::MAX);
    let lin = outcome_linear_predictors(cfg.rho, &stream, n_mc)?;
    let (mu1, mu0) = marginal_means(&lin, cfg.theta_c);
    Ok(ScenarioTruth {
        log_rr: (mu1 / mu0).ln(),
        log_or: (mu1 / (1.0 - mu1)).ln() - (mu0 / (1.0 - mu0)).ln(),
        rd: mu1 - mu0,
    })
}

/// Solve the missingness intercept γ₀ so that the marginal missing rate hits
/// `rate_target` under the given scenario laws.
pub fn solve_gamma0(
    rate_target: f64,
    gamma_y: f64,
    rho: f64,
    theta_c: f64,
    stream: &RngStream,
    n_mc: usize,
) -> Result<f64> {
    if !(0.0..1.0).contains(&rate_target) || rate_target == 0.0 {
        return Err(Error::Parameter(format!(
            "missing rate target {rate_target} outside (0,1)"
        )));
    }
    let probe = ScenarioConfig {
        n: n_mc,
        rho,
        target_rr: if theta_c == 0.0 { 1.0 } else { 2.0 },
        theta_c,
        gamma_y,
        gamma_0: 0.0,
        missing_rate_target: rate_target,
        include_outcome: true,
        m: 2,
        cycles: 1,
        reps: 1,
        seed: stream.seed(),
        variant: Variant::Base,
    };
    let mut rng = stream.rng();
    let raw = draw_population(&probe, &mut rng, n_mc)?;
    let shift: Vec<f64> = (0..n_mc)
        .map(|i| raw.z[i] + raw.x2[i] + gamma_y * raw.y[i])
        .collect();
    let rate_at = |g0: f64| shift.iter().map(|&s| expit(g0 + s)).sum::<f64>() / n_mc as f64;
    let mut lo = -20.0;
    let mut hi = 10.0;
    if rate_at(lo) > rate_target || rate_at(hi) < rate_target {
        return Err(Error::Parameter(
            "bracket failure in missingness calibration".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate_at(mid);
        if (r - rate_target).abs() < 0.002 {
            return Ok(mid);
        }
        if r < rate_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario7(seed: u64) -> ScenarioConfig {
        ScenarioConfig::preset(7, seed, 1).unwrap()
    }

    #[test]
    fn presets_span_the_factorial_grid() {
        let s1 = ScenarioConfig::preset(1, 0, 1).unwrap();
        assert_eq!(
            (s1.target_rr, s1.rho, s1.gamma_y, s1.include_outcome),
            (1.0, 0.3, -0.4, true)
        );
        assert_eq!(s1.theta_c, 0.0);
        let s7 = scenario7(0);
        assert_eq!(
            (s7.target_rr, s7.rho, s7.gamma_y, s7.include_outcome),
            (2.0, 0.6, -0.4, true)
        );
        assert_eq!(s7.theta_c, THETA_C_RR2_RHO06);
        let s15 = ScenarioConfig::preset(15, 0, 1).unwrap();
        assert_eq!(
            (s15.target_rr, s15.rho, s15.gamma_y, s15.include_outcome),
            (2.0, 0.6, -0.4, false)
        );
        let s8 = ScenarioConfig::preset(8, 0, 1).unwrap();
        assert_eq!((s8.gamma_y, s8.gamma_0), (0.0, -1.5));
        let s3 = ScenarioConfig::preset(3, 0, 1).unwrap();
        assert_eq!(
            (s3.target_rr, s3.rho, s3.theta_c),
            (2.0, 0.3, THETA_C_RR2_RHO03)
        );
    }

    #[test]
    fn pre_and_post_agree_on_every_observed_cell() {
        let cfg = scenario7(42);
        let (pre, post) = generate(&cfg, &RngStream::new(42, 1)).unwrap();
        assert!(pre.fully_observed());
        assert_eq!(pre.n(), cfg.n);
        for (cp, cq) in pre.covariates.iter().zip(&post.covariates) {
            for i in 0..pre.n() {
                if !cq.is_missing(i) {
                    assert_eq!(cp.values()[i].to_bits(), cq.values()[i].to_bits());
                }
            }
        }
        assert_eq!(pre.y.values(), post.y.values());
        assert_eq!(pre.z.values(), post.z.values());
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let cfg = scenario7(9);
        let a = generate(&cfg, &RngStream::new(9, 5)).unwrap();
        let b = generate(&cfg, &RngStream::new(9, 5)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn missingness_indicators_are_conditionally_independent() {
        // regress R3 on (z, x2, y, R1): the R1 coefficient must vanish
        use crate::numstat::fit_logistic;
        use nalgebra::DMatrix;
        let mut cfg = scenario7(11);
        cfg.n = 400_000;
        let (_, post) = generate(&cfg, &RngStream::new(11, 0)).unwrap();
        let n = post.n();
        let x2 = post.covariate("x2").unwrap().values();
        let z = post.z.values();
        let y = post.y.values();
        let mut design = DMatrix::zeros(n, 5);
        let mut r3 = Vec::with_capacity(n);
        for i in 0..n {
            design[(i, 0)] = 1.0;
            design[(i, 1)] = z[i];
            design[(i, 2)] = x2[i];
            design[(i, 3)] = y[i];
            design[(i, 4)] = f64::from(post.covariate("x1").unwrap().is_missing(i));
            r3.push(f64::from(post.covariate("x3").unwrap().is_missing(i)));
        }
        let fit = fit_logistic(&design, &r3).unwrap();
        let r1_coef = fit.coefficients[4];
        let se = fit.covariance.as_matrix()[(4, 4)].sqrt();
        assert!(
            r1_coef.abs() < 4.0 * se + 0.01,
            "R1 coefficient {r1_coef} (se {se}) in the R3 model"
        );
    }

    #[test]
    fn gamma0_solution_is_monotone_and_matches_published_pairs() {
        let stream = RngStream::new(3, 0);
        let n_mc = 400_000;
        let g_low = solve_gamma0(0.10, -0.4, 0.6, THETA_C_RR2_RHO06, &stream, n_mc).unwrap();
        let g_mid = solve_gamma0(0.30, -0.4, 0.6, THETA_C_RR2_RHO06, &stream, n_mc).unwrap();
        let g_high = solve_gamma0(0.60, -0.4, 0.6, THETA_C_RR2_RHO06, &stream, n_mc).unwrap();
        assert!(
            g_low < g_mid && g_mid < g_high,
            "({g_low}, {g_mid}, {g_high})"
        );
        assert!(
            (g_mid - (-1.3)).abs() < 0.05,
            "gamma0(30%, gammaY=-0.4) = {g_mid}"
        );
        let g_mid0 = solve_gamma0(0.30, 0.0, 0.6, THETA_C_RR2_RHO06, &stream, n_mc).unwrap();
        assert!(
            (g_mid0 - (-1.5)).abs() < 0.05,
            "gamma0(30%, gammaY=0) = {g_mid0}"
        );
    }

    #[test]
    fn miss_yz_variant_masks_outcome_and_treatment() {
        let cfg = scenario7(13)
            .with_variant(Variant::MissYzMcar, 10_000)
            .unwrap();
        let (_, post) = generate(&cfg, &RngStream::new(13, 0)).unwrap();
        let ry = post.y.missing_rate();
        let rz = post.z.missing_rate();
        assert!((ry - 0.30).abs() < 0.04, "outcome missing rate {ry}");
        assert!((rz - 0.30).abs() < 0.04, "treatment missing rate {rz}");
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let cfg = scenario7(1);
        let mut v = serde_json::to_value(&cfg).unwrap();
        let round: ScenarioConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(round, cfg);
        v.as_object_mut().unwrap().insert("bogus".into(), 1.into());
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
    }
}
