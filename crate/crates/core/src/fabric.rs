//! Hardware layer emulation: a per-node power controller speaking a line
//! protocol, and a MoM-like agent that runs assigned jobs on the cluster
//! clock and writes an epilog record for every execution.
//!
//! Power protocol (ASCII, space separated, newline terminated):
//!
//! ```text
//! PWR ON nn  | PWR OFF nn | STA nn
//! ACK nn ON  | ACK nn OFF | STA nn STATE | ERR nn REASON
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{JobId, NodeId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeState {
    Off,
    Booting,
    Up,
    Busy,
    Fault,
}

impl NodeState {
    pub const ALL: [NodeState; 5] = [
        NodeState::Off,
        NodeState::Booting,
        NodeState::Up,
        NodeState::Busy,
        NodeState::Fault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Off => "OFF",
            NodeState::Booting => "BOOTING",
            NodeState::Up => "UP",
            NodeState::Busy => "BUSY",
            NodeState::Fault => "FAULT",
        }
    }

    /// Edges of the node state graph.
    pub fn can_transition(self, to: NodeState) -> bool {
        use NodeState::*;
        matches!(
            (self, to),
            (Off, Booting) | (Booting, Up) | (Up, Busy) | (Busy, Up) | (Up | Busy | Fault | Booting, Off)
        ) || (to == Fault && self != Fault)
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub boot_delay: u64,
    pub heartbeat_interval: u64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            boot_delay: 2,
            heartbeat_interval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub name: String,
    pub bytes: u64,
}

/// What the scheduler hands a node agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub job: JobId,
    pub cpu_seconds: u64,
    pub fail: bool,
    pub payload: Option<Payload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpilogRecord {
    pub job: JobId,
    pub node: NodeId,
    pub start: Timestamp,
    pub end: Timestamp,
    pub cpu_seconds: u64,
    pub exit_status: i32,
    pub detail: Vec<String>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_JOB_ERROR: i32 = 1;
pub const EXIT_KILLED: i32 = 143;
pub const EXIT_POWER_LOSS: i32 = 137;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecOutcome {
    Finished,
    /// The job itself failed (failure flag).
    JobError,
    PowerOff,
    NodeFault,
}

impl ExecOutcome {
    pub fn is_success(self) -> bool {
        self == ExecOutcome::Finished
    }
}

/// Things that happen to nodes without the scheduler asking for them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FabricEvent {
    NodeUp(NodeId),
    ExecutionEnded {
        job: JobId,
        node: NodeId,
        outcome: ExecOutcome,
        epilog: EpilogRecord,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Execution {
    desc: JobDescriptor,
    started: Timestamp,
    /// Seconds run in closed segments (before the last suspend).
    banked: u64,
    /// Start of the open run segment; `None` while suspended.
    segment: Option<Timestamp>,
}

impl Execution {
    fn progress(&self, now: Timestamp) -> u64 {
        self.banked + self.segment.map(|s| now.since(s)).unwrap_or(0)
    }

    fn completes_at(&self) -> Option<Timestamp> {
        self.segment
            .map(|s| s.plus(self.desc.cpu_seconds.saturating_sub(self.banked)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeAgent {
    state: NodeState,
    cpu_seconds_used: u64,
    execution: Option<Execution>,
    last_heartbeat: Timestamp,
    up_since: Timestamp,
    boot_ready_at: Option<Timestamp>,
    boot_fault: bool,
}

impl NodeAgent {
    fn new() -> NodeAgent {
        NodeAgent {
            state: NodeState::Off,
            cpu_seconds_used: 0,
            execution: None,
            last_heartbeat: Timestamp::ZERO,
            up_since: Timestamp::ZERO,
            boot_ready_at: None,
            boot_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub state: NodeState,
    pub cpu_seconds_used: u64,
    pub running_job: Option<JobId>,
    pub last_heartbeat: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node {0} is not up")]
    NodeNotUp(NodeId),
    #[error("node {0} is busy")]
    NodeBusy(NodeId),
    #[error("node {node} is not running job {job}")]
    NotRunning { node: NodeId, job: JobId },
}

/// Node transition observed by the fabric (drained by tests and monitors).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: NodeState,
    pub to: NodeState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeFabric {
    config: FabricConfig,
    now: Timestamp,
    nodes: BTreeMap<NodeId, NodeAgent>,
    #[serde(skip)]
    pending: Vec<FabricEvent>,
    #[serde(skip)]
    transitions: Vec<(NodeId, Transition)>,
}

impl NodeFabric {
    /// A pool of `count` nodes named `node01..`, all OFF.
    pub fn with_pool(count: u32, config: FabricConfig) -> NodeFabric {
        NodeFabric::with_nodes((1..=count).map(NodeId::numbered), config)
    }

    pub fn with_nodes(nodes: impl IntoIterator<Item = NodeId>, config: FabricConfig) -> NodeFabric {
        NodeFabric {
            config,
            now: Timestamp::ZERO,
            nodes: nodes.into_iter().map(|n| (n, NodeAgent::new())).collect(),
            pending: Vec::new(),
            transitions: Vec::new(),
        }
    }

    pub fn config(&self) -> FabricConfig {
        self.config
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn state(&self, node: &NodeId) -> Result<NodeState, FabricError> {
        Ok(self.agent(node)?.state)
    }

    fn agent(&self, node: &NodeId) -> Result<&NodeAgent, FabricError> {
        self.nodes
            .get(node)
            .ok_or_else(|| FabricError::UnknownNode(node.to_string()))
    }

    fn agent_mut(&mut self, node: &NodeId) -> Result<&mut NodeAgent, FabricError> {
        self.nodes
            .get_mut(node)
            .ok_or_else(|| FabricError::UnknownNode(node.to_string()))
    }

    fn set_state(&mut self, node: &NodeId, to: NodeState) {
        let now = self.now;
        let agent = self.nodes.get_mut(node).expect("known node");
        let from = agent.state;
        if from == to {
            return;
        }
        debug_assert!(from.can_transition(to), "illegal node transition {from} -> {to}");
        agent.state = to;
        if to == NodeState::Up && from == NodeState::Booting {
            agent.up_since = now;
            agent.last_heartbeat = now;
        }
        self.transitions.push((node.clone(), Transition { from, to }));
    }

    /// Drains node transitions recorded since the last call.
    pub fn take_transitions(&mut self) -> Vec<(NodeId, Transition)> {
        core::mem::take(&mut self.transitions)
    }

    /// Drains events produced since the last call.
    pub fn take_events(&mut self) -> Vec<FabricEvent> {
        core::mem::take(&mut self.pending)
    }

    fn node_by_number(&self, number: &str) -> Option<NodeId> {
        let n: u32 = number.parse().ok()?;
        self.nodes.keys().find(|id| id.ordinal() == n).cloned()
    }

    /// Executes one power-protocol line and returns the reply line (without
    /// the trailing newline).
    pub fn power_exec(&mut self, line: &str) -> String {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let tokens: Vec<&str> = line.split(' ').collect();
        let numeric = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        let (action, number) = match tokens.as_slice() {
            ["PWR", "ON", n] if numeric(n) => (PowerAction::On, *n),
            ["PWR", "OFF", n] if numeric(n) => (PowerAction::Off, *n),
            ["STA", n] if numeric(n) => (PowerAction::Status, *n),
            _ => {
                let n = tokens.last().copied().filter(|t| numeric(t)).unwrap_or("00");
                return format!("ERR {} BADCMD", n);
            }
        };
        let Some(node) = self.node_by_number(number) else {
            return format!("ERR {} UNKNOWN", number);
        };
        let nn = node.protocol_number();
        match action {
            PowerAction::On => {
                self.power_on(&node);
                format!("ACK {} ON", nn)
            }
            PowerAction::Off => {
                self.power_off(&node);
                format!("ACK {} OFF", nn)
            }
            PowerAction::Status => {
                let state = self.nodes[&node].state;
                format!("STA {} {}", nn, state)
            }
        }
    }

    fn power_on(&mut self, node: &NodeId) {
        let agent = &self.nodes[node];
        if agent.state != NodeState::Off {
            return;
        }
        let ready = self.now.plus(self.config.boot_delay);
        self.nodes.get_mut(node).unwrap().boot_ready_at = Some(ready);
        self.set_state(node, NodeState::Booting);
    }

    fn power_off(&mut self, node: &NodeId) {
        if self.nodes[node].state == NodeState::Off {
            return;
        }
        self.end_execution(node, ExecOutcome::PowerOff);
        self.nodes.get_mut(node).unwrap().boot_ready_at = None;
        self.set_state(node, NodeState::Off);
    }

    /// Makes the node hang in BOOTING on its next (or current) boot.
    pub fn inject_boot_failure(&mut self, node: &NodeId, hang: bool) -> Result<(), FabricError> {
        self.agent_mut(node)?.boot_fault = hang;
        Ok(())
    }

    /// Hardware fault: the node drops to FAULT, killing whatever ran on it.
    pub fn inject_fault(&mut self, node: &NodeId) -> Result<(), FabricError> {
        let state = self.agent(node)?.state;
        if state == NodeState::Fault {
            return Ok(());
        }
        self.end_execution(node, ExecOutcome::NodeFault);
        self.nodes.get_mut(node).unwrap().boot_ready_at = None;
        self.set_state(node, NodeState::Fault);
        Ok(())
    }

    fn epilog(&self, node: &NodeId, exec: &Execution, exit_status: i32, cause: &str) -> EpilogRecord {
        let cpu = exec.progress(self.now);
        let mut detail = vec![
            format!("job={}", exec.desc.job),
            format!("node={}", node),
            format!("cause={}", cause),
            format!("cpu_seconds={}", cpu),
            format!("exit_status={}", exit_status),
        ];
        if let Some(p) = &exec.desc.payload {
            detail.push(format!("payload={} bytes={}", p.name, p.bytes));
        }
        EpilogRecord {
            job: exec.desc.job.clone(),
            node: node.clone(),
            start: exec.started,
            end: self.now,
            cpu_seconds: cpu,
            exit_status,
            detail,
        }
    }

    /// Ends the running execution (if any) on an event the scheduler did not
    /// initiate, queueing the completion event.
    fn end_execution(&mut self, node: &NodeId, outcome: ExecOutcome) {
        let Some(exec) = self.nodes.get_mut(node).unwrap().execution.take() else {
            return;
        };
        let (status, cause) = match outcome {
            ExecOutcome::Finished => (EXIT_OK, "completed"),
            ExecOutcome::JobError => (EXIT_JOB_ERROR, "job error"),
            ExecOutcome::PowerOff => (EXIT_POWER_LOSS, "power off"),
            ExecOutcome::NodeFault => (EXIT_POWER_LOSS, "node fault"),
        };
        let epilog = self.epilog(node, &exec, status, cause);
        let agent = self.nodes.get_mut(node).unwrap();
        agent.cpu_seconds_used += epilog.cpu_seconds;
        self.pending.push(FabricEvent::ExecutionEnded {
            job: exec.desc.job,
            node: node.clone(),
            outcome,
            epilog,
        });
    }

    /// Accepts a job on an UP node.
    pub fn mom_assign(&mut self, node: &NodeId, desc: JobDescriptor) -> Result<(), FabricError> {
        let now = self.now;
        let agent = self.agent_mut(node)?;
        match agent.state {
            NodeState::Up => {}
            NodeState::Busy => return Err(FabricError::NodeBusy(node.clone())),
            _ => return Err(FabricError::NodeNotUp(node.clone())),
        }
        agent.execution = Some(Execution {
            desc,
            started: now,
            banked: 0,
            segment: Some(now),
        });
        self.set_state(node, NodeState::Busy);
        Ok(())
    }

    fn running_mut(&mut self, node: &NodeId, job: &JobId) -> Result<&mut Execution, FabricError> {
        let agent = self.agent_mut(node)?;
        match agent.execution.as_mut() {
            Some(e) if &e.desc.job == job => Ok(e),
            _ => Err(FabricError::NotRunning {
                node: node.clone(),
                job: job.clone(),
            }),
        }
    }

    /// Pauses the job; the node stays BUSY and keeps its reservation.
    pub fn mom_suspend(&mut self, node: &NodeId, job: &JobId) -> Result<(), FabricError> {
        let now = self.now;
        let exec = self.running_mut(node, job)?;
        if let Some(start) = exec.segment.take() {
            exec.banked += now.since(start);
        }
        Ok(())
    }

    pub fn mom_resume(&mut self, node: &NodeId, job: &JobId) -> Result<(), FabricError> {
        let now = self.now;
        let exec = self.running_mut(node, job)?;
        if exec.segment.is_none() {
            exec.segment = Some(now);
        }
        Ok(())
    }

    /// Kills a job at the scheduler's request. The node returns to UP and
    /// the epilog is handed back directly.
    pub fn mom_kill(&mut self, node: &NodeId, job: &JobId, cause: &str) -> Result<EpilogRecord, FabricError> {
        self.running_mut(node, job)?;
        let exec = self.nodes.get_mut(node).unwrap().execution.take().unwrap();
        let epilog = self.epilog(node, &exec, EXIT_KILLED, cause);
        self.nodes.get_mut(node).unwrap().cpu_seconds_used += epilog.cpu_seconds;
        self.set_state(node, NodeState::Up);
        Ok(epilog)
    }

    /// Seconds the job has run on this node so far.
    pub fn job_progress(&self, node: &NodeId, job: &JobId) -> Option<u64> {
        let exec = self.nodes.get(node)?.execution.as_ref()?;
        (&exec.desc.job == job).then(|| exec.progress(self.now))
    }

    pub fn mom_report(&self, node: &NodeId) -> Result<NodeMetrics, FabricError> {
        let agent = self.agent(node)?;
        let running = agent.execution.as_ref();
        Ok(NodeMetrics {
            node: node.clone(),
            state: agent.state,
            cpu_seconds_used: agent.cpu_seconds_used
                + running.map(|e| e.progress(self.now)).unwrap_or(0),
            running_job: running.map(|e| e.desc.job.clone()),
            last_heartbeat: agent.last_heartbeat,
        })
    }

    /// Earliest pending timed event (boot completion or job completion).
    pub fn next_event_time(&self) -> Option<Timestamp> {
        self.nodes
            .values()
            .filter_map(|a| {
                let boot = match (a.state, a.boot_fault) {
                    (NodeState::Booting, false) => a.boot_ready_at,
                    _ => None,
                };
                let done = a.execution.as_ref().and_then(Execution::completes_at);
                match (boot, done) {
                    (Some(b), Some(d)) => Some(b.min(d)),
                    (b, d) => b.or(d),
                }
            })
            .min()
    }

    /// Moves the clock to `t`, processing every timed event due at or before
    /// it in (time, node) order.
    pub fn advance_to(&mut self, t: Timestamp) {
        if t < self.now {
            return;
        }
        while let Some(next) = self.next_event_time().filter(|n| *n <= t) {
            self.now = self.now.max(next);
            let due: Vec<NodeId> = self
                .nodes
                .iter()
                .filter(|(_, a)| {
                    let boot_due = a.state == NodeState::Booting
                        && !a.boot_fault
                        && a.boot_ready_at.map(|r| r <= next).unwrap_or(false);
                    let job_due = a
                        .execution
                        .as_ref()
                        .and_then(Execution::completes_at)
                        .map(|c| c <= next)
                        .unwrap_or(false);
                    boot_due || job_due
                })
                .map(|(id, _)| id.clone())
                .collect();
            for node in due {
                if self.nodes[&node].state == NodeState::Booting {
                    self.nodes.get_mut(&node).unwrap().boot_ready_at = None;
                    self.set_state(&node, NodeState::Up);
                    self.pending.push(FabricEvent::NodeUp(node.clone()));
                } else {
                    let fail = self.nodes[&node]
                        .execution
                        .as_ref()
                        .map(|e| e.desc.fail)
                        .unwrap_or(false);
                    let outcome = if fail { ExecOutcome::JobError } else { ExecOutcome::Finished };
                    self.end_execution(&node, outcome);
                    self.set_state(&node, NodeState::Up);
                }
            }
        }
        self.now = t;
        self.refresh_heartbeats();
    }

    fn refresh_heartbeats(&mut self) {
        let interval = self.config.heartbeat_interval.max(1);
        let now = self.now;
        for agent in self.nodes.values_mut() {
            if matches!(agent.state, NodeState::Up | NodeState::Busy) {
                let beats = now.since(agent.up_since) / interval;
                agent.last_heartbeat = agent.up_since.plus(beats * interval);
            }
        }
    }

    /// Nodes in state UP with nothing assigned.
    pub fn is_idle(&self, node: &NodeId) -> bool {
        self.nodes
            .get(node)
            .map(|a| a.state == NodeState::Up && a.execution.is_none())
            .unwrap_or(false)
    }

    pub fn up_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, a)| matches!(a.state, NodeState::Up | NodeState::Busy))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

#[derive(Clone, Copy)]
enum PowerAction {
    On,
    Off,
    Status,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fabric() -> NodeFabric {
        NodeFabric::with_pool(4, FabricConfig::default())
    }

    fn n(i: u32) -> NodeId {
        NodeId::numbered(i)
    }

    fn job(cpu: u64, fail: bool) -> JobDescriptor {
        JobDescriptor {
            job: JobId::new("block01", 1),
            cpu_seconds: cpu,
            fail,
            payload: None,
        }
    }

    fn boot(f: &mut NodeFabric, i: u32) {
        assert_eq!(f.power_exec(&format!("PWR ON {:02}", i)), format!("ACK {:02} ON", i));
        let t = f.now().plus(f.config().boot_delay);
        f.advance_to(t);
        assert_eq!(f.state(&n(i)), Ok(NodeState::Up));
        f.take_events();
    }

    #[test]
    fn power_on_boots_after_delay() {
        let mut f = fabric();
        assert_eq!(f.power_exec("PWR ON 03"), "ACK 03 ON");
        assert_eq!(f.power_exec("STA 03"), "STA 03 BOOTING");
        f.advance_to(Timestamp(1));
        assert_eq!(f.power_exec("STA 03"), "STA 03 BOOTING");
        f.advance_to(Timestamp(2));
        assert_eq!(f.power_exec("STA 03"), "STA 03 UP");
        assert_eq!(f.take_events(), vec![FabricEvent::NodeUp(n(3))]);
    }

    #[test]
    fn power_on_is_idempotent() {
        let mut f = fabric();
        boot(&mut f, 3);
        f.take_transitions();
        assert_eq!(f.power_exec("PWR ON 03"), "ACK 03 ON");
        assert_eq!(f.state(&n(3)), Ok(NodeState::Up));
        assert!(f.take_transitions().is_empty());
    }

    #[test]
    fn protocol_errors() {
        let mut f = fabric();
        assert_eq!(f.power_exec("PWR ON 09"), "ERR 09 UNKNOWN");
        assert_eq!(f.power_exec("STA 42"), "ERR 42 UNKNOWN");
        assert_eq!(f.power_exec("PWR DANCE 03"), "ERR 03 BADCMD");
        assert_eq!(f.power_exec("hello"), "ERR 00 BADCMD");
        assert_eq!(f.power_exec("PWR  ON 03"), "ERR 03 BADCMD");
        assert_eq!(f.power_exec("pwr on 03"), "ERR 03 BADCMD");
        assert_eq!(f.power_exec("STA 3"), "STA 03 OFF");
        assert_eq!(f.power_exec("PWR OFF 01\n"), "ACK 01 OFF");
    }

    #[test]
    fn job_runs_and_writes_epilog() {
        let mut f = fabric();
        boot(&mut f, 1);
        let start = f.now();
        f.mom_assign(&n(1), job(5, false)).unwrap();
        let m = f.mom_report(&n(1)).unwrap();
        assert_eq!(m.state, NodeState::Busy);
        assert_eq!(m.running_job, Some(JobId::new("block01", 1)));
        f.advance_to(start.plus(5));
        assert_eq!(f.state(&n(1)), Ok(NodeState::Up));
        let events = f.take_events();
        assert_eq!(events.len(), 1);
        match &events[0] {
            FabricEvent::ExecutionEnded { outcome, epilog, .. } => {
                assert_eq!(*outcome, ExecOutcome::Finished);
                assert_eq!(epilog.exit_status, 0);
                assert_eq!(epilog.cpu_seconds, 5);
                assert_eq!(epilog.start, start);
                assert_eq!(epilog.end, start.plus(5));
            }
            other => panic!("unexpected {other:?}"),
        }
        let m = f.mom_report(&n(1)).unwrap();
        assert_eq!(m.cpu_seconds_used, 5);
        assert_eq!(m.running_job, None);
    }

    #[test]
    fn assign_preconditions() {
        let mut f = fabric();
        assert_eq!(f.mom_assign(&n(1), job(5, false)), Err(FabricError::NodeNotUp(n(1))));
        boot(&mut f, 1);
        f.mom_assign(&n(1), job(5, false)).unwrap();
        assert_eq!(f.mom_assign(&n(1), job(5, false)), Err(FabricError::NodeBusy(n(1))));
        assert!(matches!(
            f.mom_assign(&n(9), job(5, false)),
            Err(FabricError::UnknownNode(_))
        ));
    }

    #[test]
    fn failure_flag_yields_nonzero_exit() {
        let mut f = fabric();
        boot(&mut f, 2);
        f.mom_assign(&n(2), job(3, true)).unwrap();
        f.advance_to(f.now().plus(3));
        match &f.take_events()[0] {
            FabricEvent::ExecutionEnded { outcome, epilog, .. } => {
                assert_eq!(*outcome, ExecOutcome::JobError);
                assert_ne!(epilog.exit_status, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn power_off_preempts_running_job() {
        let mut f = fabric();
        boot(&mut f, 1);
        f.mom_assign(&n(1), job(50, false)).unwrap();
        f.advance_to(f.now().plus(7));
        assert_eq!(f.power_exec("PWR OFF 01"), "ACK 01 OFF");
        let events = f.take_events();
        assert!(matches!(
            &events[0],
            FabricEvent::ExecutionEnded { outcome: ExecOutcome::PowerOff, epilog, .. } if epilog.cpu_seconds == 7
        ));
        let m = f.mom_report(&n(1)).unwrap();
        assert_eq!(m.state, NodeState::Off);
        assert_eq!(m.running_job, None);
        assert_eq!(m.cpu_seconds_used, 7);
    }

    #[test]
    fn suspend_pauses_progress() {
        let mut f = fabric();
        boot(&mut f, 1);
        let id = JobId::new("block01", 1);
        let t0 = f.now();
        f.mom_assign(&n(1), job(10, false)).unwrap();
        f.advance_to(t0.plus(4));
        f.mom_suspend(&n(1), &id).unwrap();
        f.advance_to(t0.plus(100));
        assert_eq!(f.job_progress(&n(1), &id), Some(4));
        assert_eq!(f.state(&n(1)), Ok(NodeState::Busy));
        f.mom_resume(&n(1), &id).unwrap();
        assert_eq!(f.next_event_time(), Some(t0.plus(106)));
        f.advance_to(t0.plus(106));
        assert_eq!(f.state(&n(1)), Ok(NodeState::Up));
        assert_eq!(f.mom_report(&n(1)).unwrap().cpu_seconds_used, 10);
    }

    #[test]
    fn kill_returns_epilog() {
        let mut f = fabric();
        boot(&mut f, 1);
        let id = JobId::new("block01", 1);
        f.mom_assign(&n(1), job(10, false)).unwrap();
        f.advance_to(f.now().plus(2));
        let e = f.mom_kill(&n(1), &id, "stopped").unwrap();
        assert_eq!(e.exit_status, EXIT_KILLED);
        assert_eq!(e.cpu_seconds, 2);
        assert!(f.take_events().is_empty());
        assert!(f.is_idle(&n(1)));
    }

    #[test]
    fn boot_failure_hangs_in_booting() {
        let mut f = fabric();
        f.inject_boot_failure(&n(2), true).unwrap();
        f.power_exec("PWR ON 02");
        f.advance_to(Timestamp(100));
        assert_eq!(f.state(&n(2)), Ok(NodeState::Booting));
        assert_eq!(f.power_exec("PWR OFF 02"), "ACK 02 OFF");
        assert_eq!(f.state(&n(2)), Ok(NodeState::Off));
    }

    #[test]
    fn heartbeat_tracks_clock() {
        let mut f = NodeFabric::with_pool(1, FabricConfig { boot_delay: 2, heartbeat_interval: 3 });
        boot(&mut f, 1);
        for t in 2..40 {
            f.advance_to(Timestamp(t));
            let hb = f.mom_report(&n(1)).unwrap().last_heartbeat;
            assert!(Timestamp(t).since(hb) < 3);
        }
    }

    #[test]
    fn off_node_reports_off() {
        let f = fabric();
        let m = f.mom_report(&n(4)).unwrap();
        assert_eq!(m.state, NodeState::Off);
        assert_eq!(m.running_job, None);
    }

    #[test]
    fn state_graph_edges() {
        use NodeState::*;
        assert!(Off.can_transition(Booting));
        assert!(!Off.can_transition(Up));
        assert!(Busy.can_transition(Off));
        assert!(!Off.can_transition(Off));
        assert!(!Fault.can_transition(Up));
        assert!(Booting.can_transition(Fault));
    }
}
