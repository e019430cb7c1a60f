//! Exact finite-state computations for the pooled-score and
//! pooled-parameter inconsistency counter-example.
//!
//! A single binary confounder X ~ Bern(1/2) drives both treatment
//! (P(Z=1|X=0) = 1/10, P(Z=1|X=1) = 9/10) and outcome (P(Y=1) = 9/10 iff
//! X = Z = 1, else 1/10). X is observed with probability 1 when Z = 0 and
//! 1/10 when Z = 1. Enumerating the sixteen (X, Z, Y, R) states with exact
//! rational mass shows that weighting by the true score recovers
//! E[Y^{z=1}] = 1/2 exactly, while weighting by the expected pooled score or
//! by the score of the expected confounder does not.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::numstat::expit;

/// Logistic coefficients of the treatment law: expit(α₀) = 1/10,
/// expit(α₀ + α₁) = 9/10 to the printed precision.
pub const ALPHA: [f64; 2] = [-2.197_224_6, 4.394_449_2];

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(num.into(), den.into())
}

/// One configuration of (X, Z, Y, observed?) with its probability mass.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub x: u8,
    pub z: u8,
    pub y: u8,
    pub observed: bool,
    pub prob: BigRational,
}

impl WorldState {
    /// The true treatment probability for this state's confounder value.
    pub fn true_score(&self) -> BigRational {
        if self.x == 1 {
            ratio(9, 10)
        } else {
            ratio(1, 10)
        }
    }
}

/// Exact joint distribution over the sixteen states.
#[derive(Debug, Clone)]
pub struct DiscreteWorld {
    pub states: Vec<WorldState>,
}

impl DiscreteWorld {
    /// The counter-example's generating laws.
    pub fn counterexample() -> DiscreteWorld {
        let mut states = Vec::with_capacity(16);
        for x in 0..2u8 {
            let px = ratio(1, 2);
            for z in 0..2u8 {
                let pz = match (x, z) {
                    (0, 1) => ratio(1, 10),
                    (0, 0) => ratio(9, 10),
                    (1, 1) => ratio(9, 10),
                    _ => ratio(1, 10),
                };
                for y in 0..2u8 {
                    let py1 = if x == 1 && z == 1 {
                        ratio(9, 10)
                    } else {
                        ratio(1, 10)
                    };
                    let py = if y == 1 {
                        py1.clone()
                    } else {
                        ratio(1, 1) - py1
                    };
                    for obs in [true, false] {
                        let pobs1 = if z == 0 { ratio(1, 1) } else { ratio(1, 10) };
                        let pobs = if obs {
                            pobs1.clone()
                        } else {
                            ratio(1, 1) - pobs1
                        };
                        let prob = px.clone() * pz.clone() * py.clone() * pobs;
                        if !prob.is_zero() {
                            states.push(WorldState {
                                x,
                                z,
                                y,
                                observed: obs,
                                prob,
                            });
                        }
                    }
                }
            }
        }
        DiscreteWorld { states }
    }

    /// Total mass (should be exactly one).
    pub fn total_mass(&self) -> BigRational {
        self.states.iter().map(|s| s.prob.clone()).sum()
    }

    /// P(X=1 | Z=z, Y=y) as an exact rational.
    pub fn conditional_x_mean(&self, z: u8, y: u8) -> BigRational {
        let mut num = BigRational::zero();
        let mut den = BigRational::zero();
        for s in &self.states {
            if s.z == z && s.y == y {
                den += s.prob.clone();
                if s.x == 1 {
                    num += s.prob.clone();
                }
            }
        }
        num / den
    }

    /// E[e(X) | Z=z, Y=y]: the infinite-imputation average score for rows
    /// with X missing.
    pub fn expected_score_given(&self, z: u8, y: u8) -> BigRational {
        let mut num = BigRational::zero();
        let mut den = BigRational::zero();
        for s in &self.states {
            if s.z == z && s.y == y {
                den += s.prob.clone();
                num += s.prob.clone() * s.true_score();
            }
        }
        num / den
    }
}

/// The five quantities of the counter-example.
#[derive(Debug, Clone, Copy)]
pub struct Counterexample {
    /// E[Y^{z=1}]; exactly 0.5.
    pub theta_true: f64,
    /// E[e(X) | Z=1, Y=1]: the pooled score assigned to missing rows
    /// (73/82 ≈ 0.890).
    pub e_expected_missing: f64,
    /// E[YZ / ē] under the pooled-score rule (≈ 0.4645).
    pub mips_expectation: f64,
    /// Score of the expected confounder: expit(α₀ + α₁·81/82) ≈ 0.895.
    pub mipar_ps_at_xbar: f64,
    /// E[YZ / e(x̄)] under the pooled-parameter rule (≈ 0.4623).
    pub mipar_expectation: f64,
}

/// Exact enumeration of the counter-example quantities. Probabilities and
/// the pooled-score weights are carried as rationals; only the logistic
/// evaluation at x̄ is floating point.
pub fn counterexample() -> Counterexample {
    let world = DiscreteWorld::counterexample();
    debug_assert!(world.total_mass() == ratio(1, 1));

    // theta_true = Σ_x P(x) P(Y=1 | x, Z=1)
    let theta_true = ratio(1, 2) * ratio(1, 10) + ratio(1, 2) * ratio(9, 10);

    let e_missing = world.expected_score_given(1, 1);

    // pooled-score expectation: observed rows keep their true score, missing
    // rows (all treated) are scored at E[e | Z, Y]
    let mut mips = BigRational::zero();
    for s in &world.states {
        if s.z == 1 && s.y == 1 {
            let score = if s.observed {
                s.true_score()
            } else {
                world.expected_score_given(1, 1)
            };
            mips += s.prob.clone() / score;
        }
    }

    // pooled-parameter expectation: missing rows scored at expit(α·x̄)
    let xbar = world.conditional_x_mean(1, 1);
    let ps_at_xbar = expit(ALPHA[0] + ALPHA[1] * xbar.to_f64().unwrap());
    let mut mipar = 0.0;
    for s in &world.states {
        if s.z == 1 && s.y == 1 {
            let score = if s.observed {
                s.true_score().to_f64().unwrap()
            } else {
                ps_at_xbar
            };
            mipar += s.prob.to_f64().unwrap() / score;
        }
    }

    Counterexample {
        theta_true: theta_true.to_f64().unwrap(),
        e_expected_missing: e_missing.to_f64().unwrap(),
        mips_expectation: mips.to_f64().unwrap(),
        mipar_ps_at_xbar: ps_at_xbar,
        mipar_expectation: mipar,
    }
}

/// Population analog of the weighted treated-mean numerator: Σ Y·Z·P/score.
/// For the true propensity rule the normalizing mass Σ Z·P/score is exactly
/// one, so this equals the weighted mean itself; the pooled rules are
/// evaluated on the same unnormalized form for comparability.
pub fn brute_force_iptw_expectation<F>(world: &DiscreteWorld, score_rule: F) -> Result<f64>
where
    F: Fn(&WorldState) -> f64,
{
    let mut total = 0.0;
    let mut treated_mass = 0.0;
    for s in &world.states {
        let p = s.prob.to_f64().unwrap();
        if s.z == 1 && p > 0.0 {
            treated_mass += p;
            let score = score_rule(s);
            if score.is_nan() || score <= 0.0 {
                return Err(Error::Positivity(format!(
                    "state (x={}, z=1, y={}, observed={}) has positive mass {p} but score {score}",
                    s.x, s.y, s.observed
                )));
            }
            if s.y == 1 {
                total += p / score;
            }
        }
    }
    if treated_mass == 0.0 {
        return Err(Error::Positivity(
            "no treated state has positive probability".into(),
        ));
    }
    Ok(total)
}

/// Score rule using the exact treatment law.
pub fn true_score_rule() -> impl Fn(&WorldState) -> f64 {
    |s: &WorldState| s.true_score().to_f64().unwrap()
}

/// Score rule pooling scores: observed rows keep e(X), missing rows get
/// E[e(X) | Z, Y].
pub fn pooled_score_rule(world: &DiscreteWorld) -> impl Fn(&WorldState) -> f64 {
    let e11 = world.expected_score_given(1, 1).to_f64().unwrap();
    let e10 = world.expected_score_given(1, 0).to_f64().unwrap();
    move |s: &WorldState| {
        if s.observed {
            s.true_score().to_f64().unwrap()
        } else if s.y == 1 {
            e11
        } else {
            e10
        }
    }
}

/// Score rule pooling parameters: missing rows get expit(α·E[X | Z, Y]).
pub fn pooled_parameter_rule(world: &DiscreteWorld) -> impl Fn(&WorldState) -> f64 {
    let x11 = world.conditional_x_mean(1, 1).to_f64().unwrap();
    let x10 = world.conditional_x_mean(1, 0).to_f64().unwrap();
    move |s: &WorldState| {
        if s.observed {
            s.true_score().to_f64().unwrap()
        } else {
            let xb = if s.y == 1 { x11 } else { x10 };
            expit(ALPHA[0] + ALPHA[1] * xb)
        }
    }
}

/// The pooled-effect analog: missing rows are re-expanded over the true
/// conditional law of X given (Z, Y) and each completion weighted by its own
/// true score. Returns E[YZ/e], which equals θ exactly.
pub fn mite_analog_expectation(world: &DiscreteWorld) -> f64 {
    let mut total = BigRational::zero();
    for s in &world.states {
        if s.z != 1 || s.y != 1 {
            continue;
        }
        if s.observed {
            total += s.prob.clone() / s.true_score();
        } else {
            // P(X=x | Z, Y) weights over completions
            let px1 = world.conditional_x_mean(s.z, s.y);
            let px0 = ratio(1, 1) - px1.clone();
            total += s.prob.clone() * (px1 / ratio(9, 10) + px0 / ratio(1, 10));
        }
    }
    total.to_f64().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_mass_is_exactly_one() {
        let w = DiscreteWorld::counterexample();
        assert_eq!(w.total_mass(), ratio(1, 1));
    }

    #[test]
    fn theta_true_is_exactly_half() {
        let ce = counterexample();
        assert_eq!(ce.theta_true, 0.5);
    }

    #[test]
    fn published_rounded_values_are_reproduced() {
        let ce = counterexample();
        assert!((ce.e_expected_missing - 73.0 / 82.0).abs() < 1e-15);
        assert!((ce.e_expected_missing - 0.890).abs() < 1e-3);
        assert!(
            (ce.mips_expectation - 0.465).abs() < 1e-3,
            "{}",
            ce.mips_expectation
        );
        assert!(
            (ce.mipar_ps_at_xbar - 0.895).abs() < 1e-3,
            "{}",
            ce.mipar_ps_at_xbar
        );
        assert!(
            (ce.mipar_expectation - 0.462).abs() < 1e-3,
            "{}",
            ce.mipar_expectation
        );
    }

    #[test]
    fn xbar_is_81_over_82() {
        let w = DiscreteWorld::counterexample();
        assert_eq!(w.conditional_x_mean(1, 1), ratio(81, 82));
    }

    #[test]
    fn brute_force_recovers_theta_under_the_true_score() {
        let w = DiscreteWorld::counterexample();
        let theta = brute_force_iptw_expectation(&w, true_score_rule()).unwrap();
        assert!((theta - 0.5).abs() < 1e-12, "{theta}");
    }

    #[test]
    fn brute_force_agrees_with_enumeration_on_both_pooled_rules() {
        let w = DiscreteWorld::counterexample();
        let ce = counterexample();
        let mips = brute_force_iptw_expectation(&w, pooled_score_rule(&w)).unwrap();
        let mipar = brute_force_iptw_expectation(&w, pooled_parameter_rule(&w)).unwrap();
        assert!((mips - ce.mips_expectation).abs() < 1e-12);
        assert!((mipar - ce.mipar_expectation).abs() < 1e-12);
    }

    #[test]
    fn mite_analog_is_exactly_consistent() {
        let w = DiscreteWorld::counterexample();
        assert_eq!(mite_analog_expectation(&w), 0.5);
    }

    #[test]
    fn zero_score_on_positive_mass_is_a_positivity_error() {
        let w = DiscreteWorld::counterexample();
        let r = brute_force_iptw_expectation(&w, |_| 0.0);
        assert!(matches!(r, Err(Error::Positivity(_))));
    }

    #[test]
    fn world_without_treated_mass_is_a_positivity_error() {
        let mut w = DiscreteWorld::counterexample();
        w.states.retain(|s| s.z == 0);
        let r = brute_force_iptw_expectation(&w, true_score_rule());
        assert!(matches!(r, Err(Error::Positivity(_))));
    }
}
