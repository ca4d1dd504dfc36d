use openpc_core::block::ReviewDecision;
use openpc_core::flood::FloodConfig;
use openpc_core::ids::{BlockId, JobId, NodeId, RequestId, Timestamp};
use openpc_core::scheduler::{JobAction, JobSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    User,
    Admin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// The node drops to FAULT now.
    Fault,
    /// The node hangs in BOOTING on its next boot.
    BootHang,
    /// Clears a pending boot hang.
    BootOk,
}

/// A state change. Replaying these in sequence order rebuilds the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Mutation {
    UserRegistered {
        username: String,
        display_name: String,
        role: Role,
        approved: bool,
        salt: String,
        password_hash: String,
    },
    UserApproved {
        username: String,
    },
    BlockRequested {
        user: String,
        nodes: u32,
        start: Timestamp,
        end: Timestamp,
        description: String,
    },
    RequestReviewed {
        request: RequestId,
        decision: ReviewDecision,
    },
    BlockActivated {
        block: BlockId,
    },
    BlockDeactivated {
        block: BlockId,
    },
    EnvironmentChosen {
        block: BlockId,
        profile: String,
    },
    JobSubmitted {
        user: String,
        queue: String,
        spec: JobSpec,
    },
    JobActionApplied {
        job: JobId,
        action: JobAction,
    },
    NodePowered {
        node: NodeId,
        on: bool,
    },
    NodeFaultInjected {
        node: NodeId,
        fault: FaultKind,
    },
    GatewayCommand {
        user: String,
        block: BlockId,
        raw: String,
    },
    FloodRunRecorded {
        config: FloodConfig,
    },
}

impl Mutation {
    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::UserRegistered { .. } => "user_registered",
            Mutation::UserApproved { .. } => "user_approved",
            Mutation::BlockRequested { .. } => "block_requested",
            Mutation::RequestReviewed { .. } => "request_reviewed",
            Mutation::BlockActivated { .. } => "block_activated",
            Mutation::BlockDeactivated { .. } => "block_deactivated",
            Mutation::EnvironmentChosen { .. } => "environment_chosen",
            Mutation::JobSubmitted { .. } => "job_submitted",
            Mutation::JobActionApplied { .. } => "job_action_applied",
            Mutation::NodePowered { .. } => "node_powered",
            Mutation::NodeFaultInjected { .. } => "node_fault_injected",
            Mutation::GatewayCommand { .. } => "gateway_command",
            Mutation::FloodRunRecorded { .. } => "flood_run_recorded",
        }
    }
}

/// One line of the event log: `{"seq":..,"timestamp":..,"kind":..,"payload":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub mutation: Mutation,
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }

    pub fn from_line(line: &str) -> Result<Event, serde_json::Error> {
        serde_json::from_str(line)
    }
}
