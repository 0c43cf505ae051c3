//! Supervisor gateway: a WebSocket service through which live humans act as
//! the supervisor policy for the robots allocated to them.
//!
//! Messages are JSON text frames tagged by `type` (see [`SessionMsg`]). The
//! simulation is lock-step: a timestep is only taken once every allocated
//! human has answered the observation for that timestep.

mod client;
mod protocol;
mod server;

pub use client::GatewayClient;
pub use protocol::{codes, SessionMsg, PROTOCOL_VERSION};
pub use server::{ActionRequest, Gateway, GatewayConfig, TranscriptEntry};

use std::time::Duration;

use crate::env::{Environment, InterventionKind, ACTION_NAMES};
use crate::metrics::MetricsRecord;
use crate::runner::{Assignment, Supervisor};
use crate::{Error, Result};

/// Runner supervisor backed by a [`Gateway`]. Timeouts pause the fleet and
/// the round is offered again until every human answers.
pub struct GatewaySupervisor<'g> {
    gateway: &'g Gateway,
    timeout: Option<Duration>,
    t_teleop: u32,
    t_reset: u32,
}

impl<'g> GatewaySupervisor<'g> {
    pub fn new(gateway: &'g Gateway, timeout: Option<Duration>, t_teleop: u32, t_reset: u32) -> Self {
        GatewaySupervisor { gateway, timeout, t_teleop, t_reset }
    }
}

/// Offer and observation messages for one assignment.
pub fn request_for(env: &dyn Environment, a: &Assignment<'_>, t_teleop: u32, t_reset: u32) -> Result<ActionRequest> {
    let min_steps = match a.kind {
        InterventionKind::HardReset => t_reset,
        _ => t_teleop,
    };
    let offer = SessionMsg::AssignmentOffer { t: a.t, robot: Some(a.robot), kind: a.kind, elapsed: a.elapsed, min_steps };
    let observation = SessionMsg::Observation {
        t: a.t,
        robot: a.robot,
        kind: a.kind,
        render: env.render(a.state),
        position: a.state.pos,
        goal: a.state.goal,
        actions: ACTION_NAMES.iter().take(env.spec().action_arity).map(|s| s.to_string()).collect(),
    };
    ActionRequest::new(a.human, offer, observation)
}

impl Supervisor for GatewaySupervisor<'_> {
    fn act(
        &mut self,
        env: &dyn Environment,
        assignments: &[Assignment<'_>],
    ) -> Result<Vec<crate::env::SupervisorAction>> {
        let requests = assignments
            .iter()
            .map(|a| request_for(env, a, self.t_teleop, self.t_reset))
            .collect::<Result<Vec<_>>>()?;
        loop {
            match self.gateway.gather_actions(&requests, self.timeout) {
                Err(Error::Gateway(msg)) if self.timeout.is_some() && !msg.contains("shut down") => {
                    log::warn!("fleet paused: {msg}");
                }
                other => return other,
            }
        }
    }

    fn publish(&mut self, record: &MetricsRecord) {
        self.gateway.publish_metrics(record);
    }
}
