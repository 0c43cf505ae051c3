use crate::env::{expert_policy, Environment, InterventionKind, RobotState, SupervisorAction};
use crate::metrics::MetricsRecord;
use crate::Result;

/// One allocated (robot, human) pair awaiting a supervisor action.
#[derive(Debug, Clone, Copy)]
pub struct Assignment<'a> {
    pub t: u64,
    pub robot: usize,
    pub human: usize,
    pub kind: InterventionKind,
    /// Steps of this intervention already performed by the same human.
    pub elapsed: u32,
    pub state: &'a RobotState,
}

/// Source of human actions (π_H) for allocated robots.
pub trait Supervisor {
    /// Returns one action per assignment, in order. Must not return until
    /// every assignment is answered.
    fn act(&mut self, env: &dyn Environment, assignments: &[Assignment<'_>]) -> Result<Vec<SupervisorAction>>;

    /// Called once per completed timestep.
    fn publish(&mut self, _record: &MetricsRecord) {}
}

/// Every human follows the scripted expert.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedSupervisor;

impl Supervisor for ScriptedSupervisor {
    fn act(&mut self, env: &dyn Environment, assignments: &[Assignment<'_>]) -> Result<Vec<SupervisorAction>> {
        assignments.iter().map(|a| Ok(expert_policy(env, a.state)?.action)).collect()
    }
}
