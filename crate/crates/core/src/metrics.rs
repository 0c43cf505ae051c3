//! Fleet metrics: cumulative successes, hard resets, idle time, human effort
//! and return on human effort (ROHE).

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::env::{EnvSpec, FleetStepOutcome};
use crate::{Error, Result};

/// Fraction of the supervisor's episode return a horizon-based episode must
/// reach to count as a success.
pub const SUCCESS_RETURN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoheConfig {
    /// Timesteps per unit of human effort in the ROHE denominator.
    pub human_time_unit: u64,
}

impl Default for RoheConfig {
    fn default() -> Self {
        RoheConfig { human_time_unit: 100 }
    }
}

/// Cumulative metrics after timestep `t`. Column order of the metrics log
/// follows field order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub cum_reward: f64,
    pub cum_successes: u64,
    pub cum_hard_resets: u64,
    pub cum_violations: u64,
    pub cum_idle_time: u64,
    /// Sum over timesteps of the squared Frobenius norm of the allocation,
    /// i.e. the number of robot-human assignments.
    pub cum_human_steps: u64,
    /// Robots in a violating state after this step.
    pub violating: u64,
    pub rohe: f64,
}

/// Return on human effort:
/// `(M/N) * cum_reward / (1 + cum_human_steps / unit)`.
pub fn rohe(m: usize, n: usize, cum_reward: f64, cum_human_steps: u64, cfg: &RoheConfig) -> f64 {
    let scale = m as f64 / n as f64;
    let effort = cum_human_steps as f64 / cfg.human_time_unit as f64;
    scale * cum_reward / (1.0 + effort)
}

/// Folds one timestep into the running record.
///
/// `violations` are the constraint flags at the start of the step; every
/// violating robot counts one idle timestep, whether or not it is attended.
pub fn record_step(
    prev: &MetricsRecord,
    alloc: &AllocationMatrix,
    violations: &[bool],
    outcome: &FleetStepOutcome,
    cfg: &RoheConfig,
) -> Result<MetricsRecord> {
    let n = alloc.num_robots();
    if violations.len() != n || outcome.events.len() != n {
        return Err(Error::usage(format!(
            "metrics for {n} robots got {} violation flags and {} events",
            violations.len(),
            outcome.events.len()
        )));
    }
    let mut rec = *prev;
    rec.t += 1;
    rec.cum_human_steps += alloc.frobenius_sq() as u64;
    rec.cum_idle_time += violations.iter().filter(|&&v| v).count() as u64;
    rec.cum_reward += outcome.events.iter().map(|e| e.reward).sum::<f64>();
    rec.cum_successes += outcome.successes() as u64;
    rec.cum_hard_resets += outcome.resets_completed() as u64;
    rec.cum_violations += outcome.events.iter().filter(|e| e.new_violation).count() as u64;
    rec.violating = outcome.events.iter().filter(|e| e.violating_after).count() as u64;
    rec.rohe = rohe(alloc.num_humans(), n, rec.cum_reward, rec.cum_human_steps, cfg);
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reached_goal: bool,
    pub violated: bool,
    pub reached_horizon: bool,
    pub episode_return: f64,
}

/// Success of a finished episode.
///
/// Goal-conditioned tasks succeed by reaching the goal. Horizon-based tasks
/// succeed by reaching the horizon without a violation and with at least 95%
/// of the supervisor's reference return.
pub fn classify_success(ep: &EpisodeSummary, spec: &EnvSpec, supervisor_reward_ref: Option<f64>) -> Result<bool> {
    if spec.goal_conditioned {
        return Ok(ep.reached_goal && !ep.violated);
    }
    let reference = supervisor_reward_ref
        .ok_or_else(|| Error::config("horizon-based success needs a supervisor reward reference"))?;
    Ok(ep.reached_horizon && !ep.violated && ep.episode_return >= SUCCESS_RETURN_FRACTION * reference)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len();
        if n == 0 {
            return Spread { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Spread { mean, std, n }
    }
}

impl std::fmt::Display for Spread {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// End-of-run summary across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub successes: Spread,
    pub hard_resets: Spread,
    pub idle_time: Spread,
    pub human_steps: Spread,
    pub rohe: Spread,
}

impl RunSummary {
    pub fn from_finals(finals: &[MetricsRecord]) -> RunSummary {
        let col = |f: fn(&MetricsRecord) -> f64| Spread::of(&finals.iter().map(f).collect::<Vec<_>>());
        RunSummary {
            successes: col(|r| r.cum_successes as f64),
            hard_resets: col(|r| r.cum_hard_resets as f64),
            idle_time: col(|r| r.cum_idle_time as f64),
            human_steps: col(|r| r.cum_human_steps as f64),
            rohe: col(|r| r.rohe),
        }
    }
}
