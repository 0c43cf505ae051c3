//! Priority functions.
//!
//! Every function maps robots to non-negative scores; a score of zero means
//! the robot must not receive a human. Class-ordered schemes (U.C., U.G.C.,
//! C.U.R.) are realized as [`Band`]s encoded into a single scalar.

mod band;
mod stats;
mod uncertainty;

pub use band::{Band, DEFAULT_BAND_WIDTH};
pub use stats::RunningStats;
pub use uncertainty::{ensemble_variance, entropy_uncertainty};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::PriorityVector;
use crate::env::{Environment, RobotState};
use crate::learner::{PolicyModel, TabularCritic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorityKind {
    /// Violators only.
    Constraint,
    /// Thresholded uniform draws.
    Random,
    /// Uncertainty, then constraint.
    Uc,
    /// Normalized uncertainty/goal-failure combination, then constraint.
    Ugc,
    /// Constraint, then uncertainty, then risk, with an initial period.
    Cur,
}

impl PriorityKind {
    pub const ALL: [PriorityKind; 5] =
        [PriorityKind::Constraint, PriorityKind::Random, PriorityKind::Uc, PriorityKind::Ugc, PriorityKind::Cur];

    pub fn name(self) -> &'static str {
        match self {
            PriorityKind::Constraint => "constraint",
            PriorityKind::Random => "random",
            PriorityKind::Uc => "uc",
            PriorityKind::Ugc => "ugc",
            PriorityKind::Cur => "cur",
        }
    }

    pub fn needs_safety_critic(self) -> bool {
        self == PriorityKind::Cur
    }

    pub fn needs_goal_critic(self) -> bool {
        self == PriorityKind::Ugc
    }

    /// Whether the priority reads the policy's uncertainty.
    pub fn needs_uncertainty(self) -> bool {
        matches!(self, PriorityKind::Uc | PriorityKind::Ugc | PriorityKind::Cur)
    }
}

impl std::str::FromStr for PriorityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorityKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown priority function {s:?}")))
    }
}

impl std::fmt::Display for PriorityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    /// Entropy of the (ensemble-mean) action distribution.
    Entropy,
    /// Mean per-action variance across ensemble members.
    #[default]
    EnsembleVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorityConfig {
    /// Uncertainty threshold û.
    pub u_threshold: f64,
    /// Risk threshold r̂.
    pub risk_threshold: f64,
    pub random_threshold: f64,
    /// Length of the C.U.R. initial period during which violators get zero.
    pub t_initial: u64,
    /// Weight λ of the uncertainty z-score in U.G.C.
    pub ugc_weight: f64,
    /// Threshold on the combined U.G.C. value.
    pub ugc_threshold: f64,
    pub band_width: f64,
    pub uncertainty: UncertaintyMeasure,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig {
            u_threshold: 0.01,
            risk_threshold: 0.5,
            random_threshold: 0.9,
            t_initial: 100,
            ugc_weight: 0.5,
            ugc_threshold: 1.0,
            band_width: DEFAULT_BAND_WIDTH,
            uncertainty: UncertaintyMeasure::EnsembleVariance,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("u_threshold", self.u_threshold), ("risk_threshold", self.risk_threshold)] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.random_threshold) {
            return Err(Error::config("random_threshold must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ugc_weight) {
            return Err(Error::config("ugc_weight must lie in [0, 1]"));
        }
        if !(self.band_width > 0.0) {
            return Err(Error::config("band_width must be positive"));
        }
        Ok(())
    }
}

fn encode(bands: impl IntoIterator<Item = Band>, width: f64) -> PriorityVector {
    PriorityVector(bands.into_iter().map(|b| b.encode(width)).collect())
}

fn check_len(what: &str, got: usize, n: usize) -> Result<()> {
    if got != n {
        return Err(Error::usage(format!("{what} has {got} entries for {n} robots")));
    }
    Ok(())
}

/// 1 for violating robots, 0 otherwise.
pub fn constraint_priority(violations: &[bool]) -> PriorityVector {
    PriorityVector(violations.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect())
}

/// Draws `u ~ U[0,1)` per robot and keeps it only when `u >= threshold`.
pub fn random_priority<R: Rng + ?Sized>(rng: &mut R, n: usize, threshold: f64) -> PriorityVector {
    PriorityVector(
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                if u >= threshold {
                    u
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Zeroes scores strictly below `threshold`.
pub fn threshold_scores(raw: &[f64], threshold: f64) -> PriorityVector {
    PriorityVector(raw.iter().map(|&r| if r >= threshold { r } else { 0.0 }).collect())
}

/// Q_risk(s, π(s)) for every robot.
pub fn raw_risk(
    env: &dyn Environment,
    states: &[RobotState],
    critic: &TabularCritic,
    actions: &[usize],
) -> Result<Vec<f64>> {
    check_len("policy actions", actions.len(), states.len())?;
    states
        .iter()
        .zip(actions)
        .map(|(s, &a)| critic.value(env.state_index(s), a))
        .collect()
}

/// Risk of constraint violation under the robot policy, zeroed below `r_hat`.
pub fn risk_priority(
    env: &dyn Environment,
    states: &[RobotState],
    critic: Option<&TabularCritic>,
    policy: &PolicyModel,
    r_hat: f64,
) -> Result<PriorityVector> {
    let critic = critic.ok_or_else(|| Error::config("risk priority requires a safety critic"))?;
    let actions: Vec<usize> = states.iter().map(|s| policy.act(&env.featurize(s)).action).collect();
    Ok(threshold_scores(&raw_risk(env, states, critic, &actions)?, r_hat))
}

/// Failure probability `1 - Q_goal(s, π(s))` for every robot.
pub fn raw_goal_failure(
    env: &dyn Environment,
    states: &[RobotState],
    critic: &TabularCritic,
    actions: &[usize],
) -> Result<Vec<f64>> {
    if !env.spec().goal_conditioned {
        return Err(Error::config("goal priority requires a goal-conditioned environment"));
    }
    check_len("policy actions", actions.len(), states.len())?;
    states
        .iter()
        .zip(actions)
        .map(|(s, &a)| Ok((1.0 - critic.value(env.state_index(s), a)?).clamp(0.0, 1.0)))
        .collect()
}

pub fn goal_priority(
    env: &dyn Environment,
    states: &[RobotState],
    critic: Option<&TabularCritic>,
    policy: &PolicyModel,
) -> Result<PriorityVector> {
    let critic = critic.ok_or_else(|| Error::config("goal priority requires a goal critic"))?;
    let actions: Vec<usize> = states.iter().map(|s| policy.act(&env.featurize(s)).action).collect();
    Ok(PriorityVector(raw_goal_failure(env, states, critic, &actions)?))
}

/// U.C.: robots with uncertainty at or above `u_hat` first, ordered by
/// uncertainty, then violators.
pub fn compose_uc(u: &[f64], violations: &[bool], u_hat: f64, width: f64) -> Result<PriorityVector> {
    check_len("uncertainty", u.len(), violations.len())?;
    Ok(encode(
        u.iter().zip(violations).map(|(&u, &v)| {
            if u >= u_hat {
                Band::new(2, u)
            } else if v {
                Band::new(1, 0.0)
            } else {
                Band::NONE
            }
        }),
        width,
    ))
}

/// `λ z_u + (1-λ) z_g` with z-scores from the running statistics, or the raw
/// combination while either statistic has fewer than two samples.
pub fn ugc_combined(
    u: &[f64],
    g: &[f64],
    stats_u: &RunningStats,
    stats_g: &RunningStats,
    weight: f64,
) -> Result<Vec<f64>> {
    check_len("goal scores", g.len(), u.len())?;
    let warm = stats_u.count >= 2 && stats_g.count >= 2;
    Ok(u.iter()
        .zip(g)
        .map(|(&u, &g)| {
            if warm {
                weight * stats_u.normalize(u) + (1.0 - weight) * stats_g.normalize(g)
            } else {
                weight * u + (1.0 - weight) * g
            }
        })
        .collect())
}

/// U.G.C.: combined uncertainty/goal value at or above `threshold` first,
/// then violators. The statistics must already include this step's scores.
#[allow(clippy::too_many_arguments)]
pub fn compose_ugc(
    u: &[f64],
    g: &[f64],
    violations: &[bool],
    stats_u: &RunningStats,
    stats_g: &RunningStats,
    weight: f64,
    threshold: f64,
    width: f64,
) -> Result<PriorityVector> {
    check_len("uncertainty", u.len(), violations.len())?;
    let combined = ugc_combined(u, g, stats_u, stats_g, weight)?;
    Ok(encode(
        combined.iter().zip(violations).map(|(&c, &v)| {
            if c >= threshold {
                Band::new(2, c - threshold)
            } else if v {
                Band::new(1, 0.0)
            } else {
                Band::NONE
            }
        }),
        width,
    ))
}

/// U.G.C. scorer owning the running statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UgcScorer {
    pub stats_u: RunningStats,
    pub stats_g: RunningStats,
}

impl UgcScorer {
    pub fn score(&mut self, u: &[f64], g: &[f64], violations: &[bool], cfg: &PriorityConfig) -> Result<PriorityVector> {
        self.stats_u.extend(u.iter().copied());
        self.stats_g.extend(g.iter().copied());
        compose_ugc(u, g, violations, &self.stats_u, &self.stats_g, cfg.ugc_weight, cfg.ugc_threshold, cfg.band_width)
    }
}

/// C.U.R.: violators, then uncertainty at or above û, then risk at or above
/// r̂. Before `t_initial`, violators get zero.
pub fn compose_cur(
    violations: &[bool],
    u: &[f64],
    risk: &[f64],
    t: u64,
    cfg: &PriorityConfig,
) -> Result<PriorityVector> {
    check_len("uncertainty", u.len(), violations.len())?;
    check_len("risk", risk.len(), violations.len())?;
    let initial = t < cfg.t_initial;
    Ok(encode(
        (0..violations.len()).map(|i| {
            if violations[i] {
                if initial {
                    Band::NONE
                } else {
                    Band::new(3, 0.0)
                }
            } else if u[i] >= cfg.u_threshold {
                Band::new(2, u[i])
            } else if risk[i] >= cfg.risk_threshold {
                Band::new(1, risk[i])
            } else {
                Band::NONE
            }
        }),
        cfg.band_width,
    ))
}

/// Per-step inputs gathered by the experiment loop.
#[derive(Debug, Clone, Copy)]
pub struct PriorityInputs<'a> {
    pub t: u64,
    pub violations: &'a [bool],
    pub uncertainty: &'a [f64],
    /// Q_risk(s, π(s)); required by C.U.R.
    pub risk: Option<&'a [f64]>,
    /// 1 - Q_goal(s, π(s)); required by U.G.C.
    pub goal_failure: Option<&'a [f64]>,
}

/// A configured priority function with whatever state it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prioritizer {
    pub kind: PriorityKind,
    pub cfg: PriorityConfig,
    ugc: UgcScorer,
}

impl Prioritizer {
    pub fn new(kind: PriorityKind, cfg: PriorityConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Prioritizer { kind, cfg, ugc: UgcScorer::default() })
    }

    pub fn score<R: Rng + ?Sized>(&mut self, inputs: PriorityInputs<'_>, rng: &mut R) -> Result<PriorityVector> {
        let v = inputs.violations;
        match self.kind {
            PriorityKind::Constraint => Ok(constraint_priority(v)),
            PriorityKind::Random => Ok(random_priority(rng, v.len(), self.cfg.random_threshold)),
            PriorityKind::Uc => compose_uc(inputs.uncertainty, v, self.cfg.u_threshold, self.cfg.band_width),
            PriorityKind::Ugc => {
                let g = inputs.goal_failure.ok_or_else(|| Error::config("U.G.C. needs goal-critic scores"))?;
                self.ugc.score(inputs.uncertainty, g, v, &self.cfg)
            }
            PriorityKind::Cur => {
                let r = inputs.risk.ok_or_else(|| Error::config("C.U.R. needs safety-critic scores"))?;
                compose_cur(v, inputs.uncertainty, r, inputs.t, &self.cfg)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{allocate, AllocationMatrix, AllocatorConfig};
    use crate::env::InterventionRecord;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: f64 = DEFAULT_BAND_WIDTH;

    #[test]
    fn constraint_examples() {
        assert_eq!(constraint_priority(&[false, true, false]).0, vec![0.0, 1.0, 0.0]);
        assert_eq!(constraint_priority(&[false; 3]).0, vec![0.0; 3]);
        assert_eq!(constraint_priority(&[true; 3]).0, vec![1.0; 3]);
    }

    #[test]
    fn random_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(random_priority(&mut rng, 1000, 1.0).0.iter().all(|&s| s == 0.0));
        assert!(random_priority(&mut rng, 1000, 0.0).0.iter().all(|&s| s > 0.0));
        let a = random_priority(&mut ChaCha8Rng::seed_from_u64(4), 50, 0.5);
        let b = random_priority(&mut ChaCha8Rng::seed_from_u64(4), 50, 0.5);
        assert_eq!(a, b);
        assert!(a.0.iter().all(|&s| s == 0.0 || s >= 0.5));
    }

    #[test]
    fn uc_examples() {
        let p = compose_uc(&[0.9, 0.01], &[false, true], 0.05, W).unwrap();
        assert!(p.0[0] > p.0[1] && p.0[1] > 0.0);
        let p = compose_uc(&[0.01], &[false], 0.05, W).unwrap();
        assert_eq!(p.0, vec![0.0]);
        let p = compose_uc(&[0.0, 0.0], &[true, true], 0.05, W).unwrap();
        assert_eq!(p.0[0], p.0[1]);
        assert!(p.0[0] > 0.0);
    }

    #[test]
    fn ugc_symmetry_and_warmup() {
        let mut su = RunningStats::new();
        su.extend([0.1, 0.5, 0.9, 0.3]);
        let u = [0.1, 0.5, 0.9, 0.3];
        let combined = ugc_combined(&u, &u, &su, &su, 0.5).unwrap();
        for (c, x) in combined.iter().zip(&u) {
            assert!((c - su.normalize(*x)).abs() < 1e-12);
        }
        let cold = ugc_combined(&[0.2], &[0.6], &RunningStats::new(), &RunningStats::new(), 0.25).unwrap();
        assert!((cold[0] - (0.25 * 0.2 + 0.75 * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn ugc_only_violator_positive_when_below_threshold() {
        let mut scorer = UgcScorer::default();
        let cfg = PriorityConfig { ugc_threshold: 10.0, ..Default::default() };
        let p = scorer.score(&[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1], &[false, true, false], &cfg).unwrap();
        assert_eq!(p.0[0], 0.0);
        assert!(p.0[1] > 0.0);
        assert_eq!(p.0[2], 0.0);
        assert_eq!(scorer.stats_u.count, 3);
    }

    #[test]
    fn cur_examples() {
        let cfg = PriorityConfig { t_initial: 10, u_threshold: 0.05, ..Default::default() };
        assert_eq!(compose_cur(&[true], &[0.0], &[0.0], 0, &cfg).unwrap().0, vec![0.0]);
        let p = compose_cur(&[true, false], &[0.0, 0.9], &[0.0, 0.0], 10, &cfg).unwrap();
        assert!(p.0[0] > p.0[1] && p.0[1] > 0.0);
        let p = compose_cur(&[false], &[0.01], &[0.7], 10, &cfg).unwrap();
        assert!(p.0[0] > 0.0 && p.0[0] < 2.0 * W);
        let p = compose_cur(&[false], &[0.01], &[0.4], 10, &cfg).unwrap();
        assert_eq!(p.0, vec![0.0]);
    }

    #[test]
    fn critic_and_goal_need_configuration() {
        use crate::env::{make_gridworld, Cell, CellDist};
        let env = make_gridworld(3, 3, &[], CellDist::Uniform, CellDist::Cells(vec![Cell::new(2, 2)])).unwrap();
        let policy = PolicyModel::new(4, env.feature_dim(), 1, 1.0);
        let s = vec![RobotState::new(Cell::new(0, 0), Some(Cell::new(2, 2)))];
        assert!(matches!(risk_priority(&env, &s, None, &policy, 0.5), Err(Error::Config(_))));
        assert!(matches!(goal_priority(&env, &s, None, &policy), Err(Error::Config(_))));
        let mut goal = TabularCritic::new(crate::learner::CriticKind::Goal, env.num_states(), 4, 0.9);
        goal.fill(1.0);
        assert_eq!(goal_priority(&env, &s, Some(&goal), &policy).unwrap().0, vec![0.0]);
    }

    proptest! {
        #[test]
        fn thresholds_are_monotone(
            u in prop::collection::vec(0.0f64..1.5, 1..10),
            seed in any::<u64>(),
            bump in 0.0f64..1.0,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = u.len();
            let v: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let r: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let base = PriorityConfig { t_initial: 0, ..Default::default() };
            let raised = PriorityConfig { u_threshold: base.u_threshold + bump, risk_threshold: base.risk_threshold + bump, ..base };
            let lo = compose_cur(&v, &u, &r, 5, &base).unwrap();
            let hi = compose_cur(&v, &u, &r, 5, &raised).unwrap();
            for i in 0..n {
                prop_assert!(hi.0[i] <= lo.0[i]);
            }
            let lo = compose_uc(&u, &v, 0.05, W).unwrap();
            let hi = compose_uc(&u, &v, 0.05 + bump, W).unwrap();
            for i in 0..n {
                prop_assert!(hi.0[i] <= lo.0[i]);
                prop_assert!(lo.0[i] >= 0.0);
            }
        }

        #[test]
        fn cur_without_scores_allocates_like_constraint(
            v in prop::collection::vec(any::<bool>(), 1..15),
            m in 0usize..6,
        ) {
            let n = v.len();
            let cfg = PriorityConfig { t_initial: 0, ..Default::default() };
            let zeros = vec![0.0; n];
            let cur = compose_cur(&v, &zeros, &zeros, 0, &cfg).unwrap();
            let c = constraint_priority(&v);
            for i in 0..n {
                prop_assert_eq!(cur.0[i] > 0.0, c.0[i] > 0.0);
            }
            let z = AllocationMatrix::zeros(n, m);
            let recs = vec![InterventionRecord::NONE; n];
            let acfg = AllocatorConfig::default();
            prop_assert_eq!(allocate(&cur, &z, &recs, &acfg).unwrap(), allocate(&c, &z, &recs, &acfg).unwrap());
        }
    }
}
