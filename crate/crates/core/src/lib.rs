//! Interactive fleet learning engine.
//!
//! A fleet of `N` simulated robots shares one continually updated policy while
//! `M` supervisors are allocated to robots each timestep by a priority-driven
//! meta-allocator. Human interventions (teleoperation and hard resets) feed an
//! aggregated dataset that trains the shared policy, and the run is scored by
//! return on human effort (ROHE) and throughput metrics.
//!
//! Module map:
//!
//! * [`env`]: environment abstraction, the synchronized fleet step, gridworld
//!   and block-pushing environments, scripted experts.
//! * [`allocation`]: the assignment matrix and the per-timestep allocator.
//! * [`priorities`]: priority functions and their banded compositions.
//! * [`learner`]: dataset aggregation, the linear-softmax policy, tabular critics.
//! * [`metrics`]: cumulative fleet metrics and ROHE.
//! * [`runner`]: configuration, the main loop, seeds, sweeps and budget matching.
//! * [`gateway`]: WebSocket service for live human supervisors.

pub mod allocation;
pub mod env;
pub mod error;
pub mod gateway;
pub mod learner;
pub mod metrics;
pub mod priorities;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
