use rand::RngCore;

use super::{Environment, FleetState, InterventionKind, RobotState, SupervisorAction};
use crate::metrics::{classify_success, EpisodeSummary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    /// Timesteps a hard reset takes.
    pub t_reset: u32,
    /// Reject a hard-reset token sent to a robot that is not violating.
    pub forbid_reset_when_ok: bool,
    /// Supervisor episode return used to classify horizon-based successes.
    pub supervisor_reward_ref: Option<f64>,
}

impl StepConfig {
    pub fn new(t_reset: u32) -> Self {
        StepConfig { t_reset, forbid_reset_when_ok: true, supervisor_reward_ref: None }
    }
}

/// What happened to one robot during a fleet step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobotEvent {
    pub reward: f64,
    pub violating_before: bool,
    pub violating_after: bool,
    /// The robot entered a violating state during this step.
    pub new_violation: bool,
    pub success: bool,
    pub reset_completed: bool,
    pub soft_reset: bool,
    /// Episode cut by the horizon without success.
    pub truncated: bool,
    /// State was held fixed (idle violator or hard reset in progress).
    pub frozen: bool,
    /// State produced by the environment transition, before any soft reset.
    /// `None` when no environment action was applied.
    pub moved_to: Option<RobotState>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FleetStepOutcome {
    pub events: Vec<RobotEvent>,
}

impl FleetStepOutcome {
    pub fn rewards(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.reward).collect()
    }

    pub fn violations(&self) -> Vec<bool> {
        self.events.iter().map(|e| e.violating_after).collect()
    }

    pub fn successes(&self) -> usize {
        self.events.iter().filter(|e| e.success).count()
    }

    pub fn resets_completed(&self) -> usize {
        self.events.iter().filter(|e| e.reset_completed).count()
    }
}

/// Advances every robot by exactly one timestep.
///
/// Per robot, in priority order:
/// 1. hard-reset token: the state is frozen while `duration + 1 < t_reset`,
///    and resampled from the initial distribution on the final reset step;
/// 2. violating and not being reset: frozen, zero reward;
/// 3. otherwise the environment transition is applied. Reaching the goal or
///    the horizon soft-resets the robot.
///
/// `fleet.interventions` must hold the records as of the start of the step;
/// updating them is the caller's job. All inputs are validated before any
/// state changes, so an error leaves `fleet` untouched.
pub fn step_fleet<R: RngCore>(
    env: &dyn Environment,
    fleet: &mut FleetState,
    actions: &[SupervisorAction],
    cfg: &StepConfig,
    rngs: &mut [R],
) -> Result<FleetStepOutcome> {
    let n = fleet.len();
    if actions.len() != n || rngs.len() != n || fleet.interventions.len() != n {
        return Err(Error::usage(format!(
            "fleet of {n} robots got {} actions, {} rng streams, {} records",
            actions.len(),
            rngs.len(),
            fleet.interventions.len()
        )));
    }
    if cfg.t_reset == 0 {
        return Err(Error::config("t_reset must be >= 1"));
    }
    let arity = env.spec().action_arity;
    let mut violating = Vec::with_capacity(n);
    for (i, (robot, action)) in fleet.robots.iter().zip(actions).enumerate() {
        let v = env.constraint(robot)?;
        match *action {
            SupervisorAction::Move(a) if a >= arity => {
                return Err(Error::usage(format!("robot {i}: action {a} out of range for {arity} actions")));
            }
            SupervisorAction::HardReset if !v && cfg.forbid_reset_when_ok => {
                return Err(Error::usage(format!("robot {i}: hard reset requested for a non-violating robot")));
            }
            _ => {}
        }
        violating.push(v);
    }

    let horizon = env.spec().horizon;
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let mut ev = RobotEvent { violating_before: violating[i], ..Default::default() };
        let record = fleet.interventions[i];
        match actions[i] {
            SupervisorAction::HardReset => {
                let done = if record.kind == InterventionKind::HardReset { record.duration } else { 0 };
                if done + 1 >= cfg.t_reset {
                    fleet.robots[i] = env.sample_initial(&mut rngs[i])?;
                    ev.reset_completed = true;
                } else {
                    ev.frozen = true;
                }
            }
            SupervisorAction::Move(_) if violating[i] => ev.frozen = true,
            SupervisorAction::Move(a) => {
                let tr = env.transition(&fleet.robots[i], a)?;
                let mut next = tr.next;
                next.episode_step += 1;
                ev.reward = tr.reward;
                ev.moved_to = Some(next.clone());
                let violated = env.constraint(&next)?;
                let horizon_hit = horizon.is_some_and(|h| next.episode_step >= h);
                if violated {
                    ev.new_violation = true;
                    fleet.robots[i] = next;
                } else if tr.reached_goal || horizon_hit {
                    let summary = EpisodeSummary {
                        reached_goal: tr.reached_goal,
                        violated: false,
                        reached_horizon: horizon_hit,
                        episode_return: next.episode_return,
                    };
                    ev.success = classify_success(&summary, env.spec(), cfg.supervisor_reward_ref)?;
                    ev.truncated = !tr.reached_goal;
                    ev.soft_reset = true;
                    fleet.robots[i] = env.sample_initial(&mut rngs[i])?;
                } else {
                    fleet.robots[i] = next;
                }
            }
        }
        ev.violating_after = env.constraint(&fleet.robots[i])?;
        events.push(ev);
    }
    fleet.t += 1;
    Ok(FleetStepOutcome { events })
}
