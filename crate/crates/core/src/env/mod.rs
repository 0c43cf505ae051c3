//! Environments, the synchronized fleet step and scripted experts.

mod fleet;
mod grid;

pub use fleet::{step_fleet, FleetStepOutcome, RobotEvent, StepConfig};
pub use grid::{make_blockpush, make_gridworld, CellDist, GridEnv, GridKind};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::Result;

/// Discrete move actions shared by the built-in grid environments, in
/// tie-breaking order.
pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    /// Human-readable shape of a robot state, e.g. `grid 8x8`.
    pub state_descriptor: String,
    pub action_arity: usize,
    pub horizon: Option<u32>,
    pub goal_conditioned: bool,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.action_arity == 0 {
            return Err(crate::Error::Construction("action_arity must be >= 1".into()));
        }
        if self.horizon == Some(0) {
            return Err(crate::Error::Construction("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Robot (gridworld) or cube (blockpush) position.
    pub pos: Cell,
    /// Timesteps since the last reset.
    pub episode_step: u32,
    pub goal: Option<Cell>,
    /// Reward accumulated in the current episode.
    pub episode_return: f64,
}

impl RobotState {
    pub fn new(pos: Cell, goal: Option<Cell>) -> Self {
        RobotState { pos, episode_step: 0, goal, episode_return: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    #[default]
    None,
    Teleop,
    HardReset,
}

impl InterventionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::None => "none",
            InterventionKind::Teleop => "teleop",
            InterventionKind::HardReset => "hard_reset",
        }
    }
}

/// Auxiliary per-robot bookkeeping about the ongoing intervention.
///
/// `duration` counts the timesteps of the intervention already performed
/// before the current timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub kind: InterventionKind,
    pub duration: u32,
    pub human: Option<usize>,
}

impl InterventionRecord {
    pub const NONE: InterventionRecord =
        InterventionRecord { kind: InterventionKind::None, duration: 0, human: None };

    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            InterventionKind::None => self.human.is_none() && self.duration == 0,
            _ => self.human.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub robots: Vec<RobotState>,
    pub interventions: Vec<InterventionRecord>,
    pub t: u64,
}

impl FleetState {
    /// Samples every robot's initial state from its own stream.
    pub fn reset<R: RngCore>(env: &dyn Environment, rngs: &mut [R]) -> Result<Self> {
        let robots = rngs
            .iter_mut()
            .map(|rng| env.sample_initial(rng))
            .collect::<Result<Vec<_>>>()?;
        let n = robots.len();
        Ok(FleetState { robots, interventions: vec![InterventionRecord::NONE; n], t: 0 })
    }

    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }

    /// Checks that every human appears in at most one intervention record.
    pub fn humans_unique(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.interventions.iter().filter_map(|r| r.human).all(|h| seen.insert(h))
    }
}

/// An action issued to a robot: either an environment action index or the
/// distinguished hard-reset token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorAction {
    Move(usize),
    HardReset,
}

impl SupervisorAction {
    pub fn move_index(self) -> Option<usize> {
        match self {
            SupervisorAction::Move(a) => Some(a),
            SupervisorAction::HardReset => None,
        }
    }
}

impl std::fmt::Display for SupervisorAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SupervisorAction::Move(a) => write!(f, "{a}"),
            SupervisorAction::HardReset => write!(f, "R"),
        }
    }
}

/// Result of applying one environment action to a non-violating state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvTransition {
    pub next: RobotState,
    pub reward: f64,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertDecision {
    pub action: SupervisorAction,
    /// Set when no hazard-free path to the goal exists and `action` is the
    /// configured fallback.
    pub unreachable: bool,
}

/// Sparse feature vector: `(index, value)` pairs.
pub type Features = Vec<(usize, f64)>;

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Whether `state` is a fault state that needs a hard reset.
    fn constraint(&self, state: &RobotState) -> Result<bool>;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<RobotState>;

    /// Applies `action` to a non-violating state. Episode bookkeeping
    /// (step counter, soft resets) is done by the fleet step.
    fn transition(&self, state: &RobotState, action: usize) -> Result<EnvTransition>;

    fn expert(&self, state: &RobotState) -> Result<ExpertDecision>;

    fn feature_dim(&self) -> usize;

    fn featurize(&self, state: &RobotState) -> Features;

    /// Dense index used by tabular critics.
    fn state_index(&self, state: &RobotState) -> usize;

    fn num_states(&self) -> usize;

    /// Text render of the state, one string per row.
    fn render(&self, state: &RobotState) -> Vec<String>;
}

/// Scripted supervisor: hard reset for violating states, otherwise the
/// environment expert's action.
pub fn expert_policy(env: &dyn Environment, state: &RobotState) -> Result<ExpertDecision> {
    if env.constraint(state)? {
        return Ok(ExpertDecision { action: SupervisorAction::HardReset, unreachable: false });
    }
    env.expert(state)
}
