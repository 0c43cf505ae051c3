use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::metrics::MetricsRecord;
use crate::priorities::PriorityKind;
use crate::{Error, Result};

/// Baseline configs spending the same human budget as a reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetMatch {
    /// Mean human steps of the reference runs.
    pub reference_human_steps: f64,
    /// Random priority with threshold `1 - H / (N T)`.
    pub random: RunConfig,
    /// Constraint priority with the human steps added as offline pairs.
    pub constraint: RunConfig,
}

/// Random-priority threshold whose expected positive draws spend
/// `human_steps` over `n` robots and `t` timesteps.
pub fn matched_random_threshold(human_steps: f64, n: usize, t: u64) -> f64 {
    if n == 0 || t == 0 {
        return 1.0;
    }
    (1.0 - human_steps / (n as f64 * t as f64)).clamp(0.0, 1.0)
}

/// Builds budget-matched baselines from the final records of reference runs.
pub fn baseline_matching_budget(cfg: &RunConfig, reference: &[MetricsRecord]) -> Result<BudgetMatch> {
    if reference.is_empty() {
        return Err(Error::Precondition("budget matching needs at least one completed reference run".into()));
    }
    let h = reference.iter().map(|r| r.cum_human_steps as f64).sum::<f64>() / reference.len() as f64;
    let mut random = RunConfig { priority: PriorityKind::Random, ..cfg.clone() };
    random.priority_params.random_threshold = matched_random_threshold(h, cfg.num_robots, cfg.timesteps);
    let mut constraint = RunConfig { priority: PriorityKind::Constraint, ..cfg.clone() };
    constraint.learner.offline_pairs += h.round() as usize;
    Ok(BudgetMatch { reference_human_steps: h, random, constraint })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(h: u64) -> MetricsRecord {
        MetricsRecord { cum_human_steps: h, ..Default::default() }
    }

    #[test]
    fn threshold_endpoints() {
        let cfg = RunConfig { num_robots: 10, timesteps: 100, ..Default::default() };
        let m = baseline_matching_budget(&cfg, &[rec(0)]).unwrap();
        assert_eq!(m.random.priority_params.random_threshold, 1.0);
        let m = baseline_matching_budget(&cfg, &[rec(1000)]).unwrap();
        assert_eq!(m.random.priority_params.random_threshold, 0.0);
        let m = baseline_matching_budget(&cfg, &[rec(50), rec(150)]).unwrap();
        assert!((m.random.priority_params.random_threshold - 0.9).abs() < 1e-12);
        assert_eq!(m.constraint.learner.offline_pairs, cfg.learner.offline_pairs + 100);
        assert_eq!(m.constraint.priority, PriorityKind::Constraint);
    }

    #[test]
    fn missing_reference_is_an_error() {
        assert!(baseline_matching_budget(&RunConfig::default(), &[]).is_err());
    }
}
