use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::AllocatorConfig;
use crate::env::{make_blockpush, make_gridworld, Cell, CellDist, GridEnv};
use crate::metrics::RoheConfig;
use crate::priorities::{PriorityConfig, PriorityKind, UncertaintyMeasure};
use crate::{Error, Result};

/// Environment selection and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld {
        width: usize,
        height: usize,
        #[serde(default)]
        hazards: Vec<Cell>,
        /// Start cells; uniform over free cells when omitted.
        #[serde(default)]
        starts: Option<Vec<Cell>>,
        /// Goal cells; uniform over free cells when omitted.
        #[serde(default)]
        goals: Option<Vec<Cell>>,
        #[serde(default)]
        horizon: Option<u32>,
    },
    Blockpush {
        grid_k: usize,
        #[serde(default = "default_margin")]
        boundary_margin: usize,
        #[serde(default)]
        corner_exclusions: usize,
        #[serde(default)]
        goals: Option<Vec<Cell>>,
        #[serde(default)]
        horizon: Option<u32>,
    },
}

fn default_margin() -> usize {
    1
}

fn dist(cells: &Option<Vec<Cell>>) -> CellDist {
    match cells {
        Some(c) => CellDist::Cells(c.clone()),
        None => CellDist::Uniform,
    }
}

impl EnvConfig {
    /// 8x8 gridworld with a single goal in the bottom-right corner and two
    /// hazard walls the robots must route around.
    pub fn default_gridworld() -> Self {
        let mut hazards = Vec::new();
        for y in 1..5 {
            hazards.push(Cell::new(2, y));
        }
        for y in 3..7 {
            hazards.push(Cell::new(5, y));
        }
        hazards.push(Cell::new(6, 1));
        hazards.push(Cell::new(3, 6));
        EnvConfig::Gridworld {
            width: 8,
            height: 8,
            hazards,
            starts: None,
            goals: Some(vec![Cell::new(7, 7)]),
            horizon: None,
        }
    }

    pub fn build(&self) -> Result<GridEnv> {
        match self {
            EnvConfig::Gridworld { width, height, hazards, starts, goals, horizon } => {
                let env = make_gridworld(*width, *height, hazards, dist(starts), dist(goals))?;
                match horizon {
                    Some(h) => env.with_horizon(Some(*h)),
                    None => Ok(env),
                }
            }
            EnvConfig::Blockpush { grid_k, boundary_margin, corner_exclusions, goals, horizon } => {
                let env = make_blockpush(*grid_k, *boundary_margin, *corner_exclusions, dist(goals))?;
                match horizon {
                    Some(h) => env.with_horizon(Some(*h)),
                    None => Ok(env),
                }
            }
        }
    }
}

/// Policy and critic training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Offline expert pairs used to initialize the policy by behaviour cloning.
    pub offline_pairs: usize,
    /// Gradient steps of the initial behaviour cloning.
    pub pretrain_steps: usize,
    pub batch_size: usize,
    /// Policy gradient steps per timestep.
    pub steps_per_timestep: usize,
    pub ensemble_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub critic_gamma: f64,
    pub critic_learning_rate: f64,
    /// Environment steps collected to pretrain each critic.
    pub critic_pretrain_timesteps: usize,
    pub critic_pretrain_steps: usize,
    pub critic_batch_size: usize,
    pub critic_steps_per_timestep: usize,
    pub balance_fraction: f64,
    /// Chance of a uniform action while collecting safety-critic data with the
    /// initial policy.
    pub critic_pretrain_epsilon: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            offline_pairs: 30,
            pretrain_steps: 300,
            batch_size: 256,
            steps_per_timestep: 1,
            ensemble_size: 5,
            temperature: 1.0,
            learning_rate: 1.0,
            critic_gamma: 0.9,
            critic_learning_rate: 0.5,
            critic_pretrain_timesteps: 2000,
            critic_pretrain_steps: 3000,
            critic_batch_size: 64,
            critic_steps_per_timestep: 1,
            balance_fraction: 0.25,
            critic_pretrain_epsilon: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorMode {
    /// The scripted expert answers for every allocated robot.
    #[default]
    Scripted,
    /// Live supervisors connected through the gateway.
    Gateway,
}

impl std::str::FromStr for SupervisorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scripted" => Ok(SupervisorMode::Scripted),
            "gateway" => Ok(SupervisorMode::Gateway),
            _ => Err(Error::config(format!("unknown supervisor mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub bind: String,
    pub token: Option<String>,
    /// Wait per timestep before pausing; `None` waits indefinitely.
    pub timeout_ms: Option<u64>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings { bind: "127.0.0.1:8765".into(), token: None, timeout_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub num_robots: usize,
    pub num_humans: usize,
    pub timesteps: u64,
    pub t_teleop: u32,
    pub t_reset: u32,
    pub sticky_reassignment: bool,
    pub priority: PriorityKind,
    pub priority_params: PriorityConfig,
    pub learner: LearnerConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub supervisor: SupervisorMode,
    pub gateway: GatewaySettings,
    pub human_time_unit: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default_gridworld(),
            num_robots: 20,
            num_humans: 2,
            timesteps: 2000,
            t_teleop: 5,
            t_reset: 5,
            sticky_reassignment: true,
            priority: PriorityKind::Cur,
            priority_params: PriorityConfig::default(),
            learner: LearnerConfig::default(),
            seeds: vec![0],
            output_dir: None,
            supervisor: SupervisorMode::Scripted,
            gateway: GatewaySettings::default(),
            human_time_unit: 100,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_robots == 0 {
            return Err(Error::config("num_robots must be >= 1"));
        }
        if self.num_humans > self.num_robots {
            return Err(Error::config(format!(
                "num_humans ({}) exceeds num_robots ({})",
                self.num_humans, self.num_robots
            )));
        }
        if self.human_time_unit == 0 {
            return Err(Error::config("human_time_unit must be >= 1"));
        }
        self.allocator().validate()?;
        self.priority_params.validate()?;
        let l = &self.learner;
        if l.temperature <= 0.0 || l.ensemble_size == 0 {
            return Err(Error::config("learner needs positive temperature and ensemble size"));
        }
        if self.priority.needs_uncertainty()
            && self.priority_params.uncertainty == UncertaintyMeasure::EnsembleVariance
            && l.ensemble_size < 2
        {
            return Err(Error::config("ensemble-variance uncertainty needs ensemble_size >= 2"));
        }
        if !(0.0..1.0).contains(&l.critic_gamma) {
            return Err(Error::config("critic_gamma must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&l.balance_fraction) {
            return Err(Error::config("balance_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn allocator(&self) -> AllocatorConfig {
        AllocatorConfig { t_teleop: self.t_teleop, t_reset: self.t_reset, sticky_reassignment: self.sticky_reassignment }
    }

    pub fn rohe(&self) -> RoheConfig {
        RoheConfig { human_time_unit: self.human_time_unit }
    }
}
