//! Experiment orchestration: configuration, the fleet learning loop, sweeps
//! and budget-matched baselines.

mod budget;
mod config;
mod experiment;
mod supervisor;
mod sweep;

pub use budget::{baseline_matching_budget, matched_random_threshold, BudgetMatch};
pub use config::{EnvConfig, GatewaySettings, LearnerConfig, RunConfig, SupervisorMode};
pub use experiment::{run_scripted, Digests, Experiment, PretrainStats, RunArtifacts, RunOutcome, StepRow};
pub use supervisor::{Assignment, ScriptedSupervisor, Supervisor};
pub use sweep::{run_sweep, run_sweep_with, SweepAxis, SweepResult, SweepRow, SweepRun};
