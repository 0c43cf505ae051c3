use serde::{Deserialize, Serialize};

use crate::env::{Cell, InterventionKind};
use crate::metrics::MetricsRecord;

pub const PROTOCOL_VERSION: u32 = 1;

/// Error codes carried by [`SessionMsg::Error`].
pub mod codes {
    pub const FLEET_FULL: &str = "fleet_full";
    pub const VERSION: &str = "version";
    pub const AUTH: &str = "auth";
    pub const HUMAN_UNAVAILABLE: &str = "human_unavailable";
    pub const STALE: &str = "stale";
    pub const INVALID_ACTION: &str = "invalid_action";
    pub const WRONG_ANSWER_KIND: &str = "wrong_answer_kind";
    pub const BAD_MESSAGE: &str = "bad_message";
    pub const UNEXPECTED: &str = "unexpected";
}

/// One JSON text frame of the supervisor protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionMsg {
    /// Client opens with its version, the shared token and optionally a
    /// preferred human index; the server answers with the granted index and
    /// a session id.
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        human: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
    },
    /// The robot this human is responsible for at timestep `t`; `robot` is
    /// absent when the human is idle.
    AssignmentOffer {
        t: u64,
        robot: Option<usize>,
        kind: InterventionKind,
        /// Steps of this intervention already performed.
        elapsed: u32,
        /// Minimum length of this intervention kind (t_T or t_R).
        min_steps: u32,
    },
    Observation {
        t: u64,
        robot: usize,
        kind: InterventionKind,
        render: Vec<String>,
        position: Cell,
        goal: Option<Cell>,
        actions: Vec<String>,
    },
    Action {
        t: u64,
        action: usize,
    },
    HardResetAck {
        t: u64,
    },
    Pause {
        reason: String,
    },
    Resume {},
    MetricsTick {
        record: MetricsRecord,
    },
    Error {
        code: String,
        message: String,
    },
}

impl SessionMsg {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        SessionMsg::Error { code: code.into(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SessionMsg::Hello { .. } => "hello",
            SessionMsg::AssignmentOffer { .. } => "assignment_offer",
            SessionMsg::Observation { .. } => "observation",
            SessionMsg::Action { .. } => "action",
            SessionMsg::HardResetAck { .. } => "hard_reset_ack",
            SessionMsg::Pause { .. } => "pause",
            SessionMsg::Resume {} => "resume",
            SessionMsg::MetricsTick { .. } => "metrics_tick",
            SessionMsg::Error { .. } => "error",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("session messages always serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
