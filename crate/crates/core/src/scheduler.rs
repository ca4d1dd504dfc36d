//! Per-queue batch scheduler: strict FIFO dispatch onto the queue's host
//! list, the job-control verbs, and CPU-time cap enforcement.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fabric::{EpilogRecord, ExecOutcome, FabricError, FabricEvent, JobDescriptor, NodeFabric, Payload};
use crate::ids::{JobId, NodeId, Timestamp};
use crate::qmgr::{Admission, DenyReason, QmgrError, QueueStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JobState {
    Queued,
    Running,
    Suspended,
    Stopped,
    Deleted,
    Finished,
    Failed,
}

impl JobState {
    pub const ALL: [JobState; 7] = [
        JobState::Queued,
        JobState::Running,
        JobState::Suspended,
        JobState::Stopped,
        JobState::Deleted,
        JobState::Finished,
        JobState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "QUEUED",
            JobState::Running => "RUNNING",
            JobState::Suspended => "SUSPENDED",
            JobState::Stopped => "STOPPED",
            JobState::Deleted => "DELETED",
            JobState::Finished => "FINISHED",
            JobState::Failed => "FAILED",
        }
    }

    /// Holds nodes.
    pub fn is_live_on_nodes(self) -> bool {
        matches!(self, JobState::Running | JobState::Suspended)
    }

    /// Every edge of the job graph, whether driven by a user action or by
    /// the scheduler itself.
    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Queued, Running)
                | (Queued, Deleted)
                | (Running, Suspended)
                | (Running, Stopped)
                | (Running, Finished)
                | (Running, Failed)
                | (Suspended, Running)
                | (Suspended, Stopped)
                | (Suspended, Deleted)
                | (Stopped, Queued)
                | (Finished, Queued)
                | (Failed, Queued)
        )
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobAction {
    Suspend,
    Resume,
    Stop,
    Delete,
    Reexecute,
}

impl JobAction {
    pub const ALL: [JobAction; 5] = [
        JobAction::Suspend,
        JobAction::Resume,
        JobAction::Stop,
        JobAction::Delete,
        JobAction::Reexecute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobAction::Suspend => "suspend",
            JobAction::Resume => "resume",
            JobAction::Stop => "stop",
            JobAction::Delete => "delete",
            JobAction::Reexecute => "reexecute",
        }
    }

    pub fn parse(s: &str) -> Option<JobAction> {
        JobAction::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Target state when applied to `from`, or `None` if the edge is absent.
    pub fn target(self, from: JobState) -> Option<JobState> {
        use JobState::*;
        match (self, from) {
            (JobAction::Suspend, Running) => Some(Suspended),
            (JobAction::Resume, Suspended) => Some(Running),
            (JobAction::Stop, Running | Suspended) => Some(Stopped),
            (JobAction::Delete, Queued | Suspended) => Some(Deleted),
            (JobAction::Reexecute, Stopped | Finished | Failed) => Some(Queued),
            _ => None,
        }
    }
}

impl fmt::Display for JobAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub environment_profile: String,
    pub nodes_requested: u32,
    pub cpu_seconds_estimate: u64,
    pub payload: Payload,
    /// Test hook: every node execution exits non-zero.
    #[serde(default)]
    pub fail: bool,
}

impl JobSpec {
    pub fn new(profile: &str, nodes: u32, cpu_seconds: u64) -> JobSpec {
        JobSpec {
            environment_profile: profile.to_string(),
            nodes_requested: nodes,
            cpu_seconds_estimate: cpu_seconds,
            payload: Payload {
                name: "job.sh".to_string(),
                bytes: 0,
            },
            fail: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailReason {
    CputExceeded,
    JobError,
    NodeLost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: Timestamp,
    pub state: JobState,
    pub cause: Option<String>,
}

/// One execution of a job: where and when it ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub nodes: Vec<NodeId>,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub owner: String,
    pub queue: String,
    pub spec: JobSpec,
    pub state: JobState,
    pub assigned_nodes: Vec<NodeId>,
    pub submitted: Timestamp,
    pub started: Option<Timestamp>,
    pub ended: Option<Timestamp>,
    pub fail_reason: Option<FailReason>,
    pub logs: Vec<EpilogRecord>,
    pub history: Vec<HistoryEntry>,
    pub runs: Vec<RunRecord>,
    /// Nodes whose execution of the current run has not ended yet.
    outstanding: Vec<NodeId>,
}

impl Job {
    fn transition(&mut self, to: JobState, at: Timestamp, cause: Option<String>) {
        debug_assert!(self.state.can_transition(to), "{} -> {}", self.state, to);
        self.state = to;
        self.history.push(HistoryEntry { at, state: to, cause });
    }

    fn close_run(&mut self, at: Timestamp) {
        if let Some(run) = self.runs.last_mut() {
            if run.end.is_none() {
                run.end = Some(at);
            }
        }
        self.ended = Some(at);
        self.assigned_nodes.clear();
        self.outstanding.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("unknown queue `{0}`")]
    UnknownQueue(String),
    #[error("access denied: {0}")]
    AccessDenied(DenyReason),
    #[error("{requested} nodes requested but the queue has {available}")]
    TooManyNodes { requested: u32, available: usize },
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("cannot {action} a {from} job")]
    IllegalTransition { from: JobState, action: JobAction },
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

impl From<QmgrError> for SchedError {
    fn from(e: QmgrError) -> Self {
        match e {
            QmgrError::UnknownQueue(q) => SchedError::UnknownQueue(q),
            other => SchedError::InvalidSpec(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueRuntime {
    pub fifo: VecDeque<JobId>,
    next_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduler {
    jobs: BTreeMap<JobId, Job>,
    queues: BTreeMap<String, QueueRuntime>,
}

/// Result of enumerating a queue's dispatchable work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub job: JobId,
    pub nodes: Vec<NodeId>,
}

impl Scheduler {
    pub fn new() -> Scheduler {
        Scheduler::default()
    }

    pub fn job(&self, id: &JobId) -> Result<&Job, SchedError> {
        self.jobs
            .get(id)
            .ok_or_else(|| SchedError::UnknownJob(id.to_string()))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn jobs_in_queue<'a>(&'a self, queue: &'a str) -> impl Iterator<Item = &'a Job> + 'a {
        self.jobs.values().filter(move |j| j.queue == queue)
    }

    pub fn runtime(&self, queue: &str) -> Option<&QueueRuntime> {
        self.queues.get(queue)
    }

    pub fn submit(
        &mut self,
        store: &QueueStore,
        user: &str,
        queue: &str,
        spec: JobSpec,
        now: Timestamp,
    ) -> Result<JobId, SchedError> {
        if let Admission::Deny(reason) = store.admits_user(queue, user)? {
            return Err(SchedError::AccessDenied(reason));
        }
        if spec.nodes_requested == 0 {
            return Err(SchedError::InvalidSpec("nodes_requested must be at least 1".into()));
        }
        let available = store.dispatch_targets(queue)?.len();
        if spec.nodes_requested as usize > available {
            return Err(SchedError::TooManyNodes {
                requested: spec.nodes_requested,
                available,
            });
        }
        let rt = self.queues.entry(queue.to_string()).or_default();
        rt.next_seq += 1;
        let id = JobId::new(queue, rt.next_seq);
        rt.fifo.push_back(id.clone());
        self.jobs.insert(
            id.clone(),
            Job {
                id: id.clone(),
                owner: user.to_string(),
                queue: queue.to_string(),
                spec,
                state: JobState::Queued,
                assigned_nodes: Vec::new(),
                submitted: now,
                started: None,
                ended: None,
                fail_reason: None,
                logs: Vec::new(),
                history: alloc::vec![HistoryEntry {
                    at: now,
                    state: JobState::Queued,
                    cause: None,
                }],
                runs: Vec::new(),
                outstanding: Vec::new(),
            },
        );
        Ok(id)
    }

    /// Starts queued jobs in strict FIFO order. A head job that does not fit
    /// blocks the rest of the queue.
    pub fn dispatch(
        &mut self,
        queue: &str,
        store: &QueueStore,
        fabric: &mut NodeFabric,
        now: Timestamp,
    ) -> Vec<Assignment> {
        let mut out = Vec::new();
        let Ok(mut targets) = store.dispatch_targets(queue) else {
            return out;
        };
        targets.sort();
        loop {
            let Some(head) = self.queues.get(queue).and_then(|rt| rt.fifo.front()).cloned() else {
                break;
            };
            let job = &self.jobs[&head];
            if !matches!(store.admits_user(queue, &job.owner), Ok(Admission::Allow)) {
                break;
            }
            let want = job.spec.nodes_requested as usize;
            let chosen: Vec<NodeId> = targets
                .iter()
                .filter(|n| fabric.is_idle(n))
                .take(want)
                .cloned()
                .collect();
            if chosen.len() < want {
                break;
            }
            let desc = JobDescriptor {
                job: head.clone(),
                cpu_seconds: job.spec.cpu_seconds_estimate,
                fail: job.spec.fail,
                payload: Some(job.spec.payload.clone()),
            };
            for node in &chosen {
                fabric
                    .mom_assign(node, desc.clone())
                    .expect("idle node accepts assignment");
            }
            self.queues.get_mut(queue).unwrap().fifo.pop_front();
            let job = self.jobs.get_mut(&head).unwrap();
            job.assigned_nodes = chosen.clone();
            job.outstanding = chosen.clone();
            job.started = Some(now);
            job.ended = None;
            job.fail_reason = None;
            job.runs.push(RunRecord {
                nodes: chosen.clone(),
                start: now,
                end: None,
            });
            job.transition(JobState::Running, now, None);
            out.push(Assignment {
                job: head,
                nodes: chosen,
            });
        }
        out
    }

    fn kill_outstanding(job: &mut Job, fabric: &mut NodeFabric, cause: &str) {
        for node in core::mem::take(&mut job.outstanding) {
            if let Ok(epilog) = fabric.mom_kill(&node, &job.id, cause) {
                job.logs.push(epilog);
            }
        }
    }

    pub fn control(
        &mut self,
        id: &JobId,
        action: JobAction,
        store: &QueueStore,
        fabric: &mut NodeFabric,
        now: Timestamp,
    ) -> Result<&Job, SchedError> {
        let job = self
            .jobs
            .get_mut(id)
            .ok_or_else(|| SchedError::UnknownJob(id.to_string()))?;
        let from = job.state;
        let to = action
            .target(from)
            .ok_or(SchedError::IllegalTransition { from, action })?;
        let cause = Some(action.as_str().to_string());
        match action {
            JobAction::Suspend => {
                for node in &job.outstanding {
                    fabric.mom_suspend(node, id)?;
                }
            }
            JobAction::Resume => {
                for node in &job.outstanding {
                    fabric.mom_resume(node, id)?;
                }
            }
            JobAction::Stop => {
                Self::kill_outstanding(job, fabric, "stopped by owner");
                job.close_run(now);
            }
            JobAction::Delete => {
                if from == JobState::Queued {
                    if let Some(rt) = self.queues.get_mut(&job.queue) {
                        rt.fifo.retain(|j| j != id);
                    }
                } else {
                    Self::kill_outstanding(job, fabric, "deleted by owner");
                    job.close_run(now);
                }
            }
            JobAction::Reexecute => {
                if let Admission::Deny(reason) = store.admits_user(&job.queue, &job.owner)? {
                    return Err(SchedError::AccessDenied(reason));
                }
                self.queues
                    .entry(job.queue.clone())
                    .or_default()
                    .fifo
                    .push_back(id.clone());
            }
        }
        job.transition(to, now, cause);
        Ok(job)
    }

    /// Accumulated CPU seconds of the job's current run, summed over nodes.
    pub fn accumulated_cpu(&self, id: &JobId, fabric: &NodeFabric) -> u64 {
        let Some(job) = self.jobs.get(id) else {
            return 0;
        };
        let live: u64 = job
            .outstanding
            .iter()
            .filter_map(|n| fabric.job_progress(n, id))
            .sum();
        let run_start = job.runs.last().map(|r| r.start);
        let closed: u64 = job
            .logs
            .iter()
            .filter(|e| Some(e.start) == run_start && job.assigned_nodes.contains(&e.node))
            .map(|e| e.cpu_seconds)
            .sum();
        live + closed
    }

    /// Fails every RUNNING job of `queue` whose accumulated CPU time strictly
    /// exceeds the queue cap.
    pub fn enforce_cput(
        &mut self,
        queue: &str,
        store: &QueueStore,
        fabric: &mut NodeFabric,
        now: Timestamp,
    ) -> Vec<JobId> {
        let Some(cap) = store.get(queue).ok().and_then(|q| q.resources_max_cput) else {
            return Vec::new();
        };
        let over: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| j.queue == queue && j.state == JobState::Running)
            .filter(|j| self.accumulated_cpu(&j.id, fabric) > cap.seconds())
            .map(|j| j.id.clone())
            .collect();
        for id in &over {
            let job = self.jobs.get_mut(id).unwrap();
            Self::kill_outstanding(job, fabric, "cput limit exceeded");
            job.close_run(now);
            job.fail_reason = Some(FailReason::CputExceeded);
            job.transition(JobState::Failed, now, Some("CPUT_EXCEEDED".into()));
        }
        over
    }

    /// Earliest time at which some running job will strictly exceed its
    /// queue's cap, assuming nothing else changes.
    pub fn next_cput_deadline(&self, store: &QueueStore, fabric: &NodeFabric) -> Option<Timestamp> {
        let now = fabric.now();
        self.jobs
            .values()
            .filter(|j| j.state == JobState::Running && !j.outstanding.is_empty())
            .filter_map(|j| {
                let cap = store.get(&j.queue).ok()?.resources_max_cput?.seconds();
                let acc = self.accumulated_cpu(&j.id, fabric);
                if acc > cap {
                    return Some(now);
                }
                let rate = j.outstanding.len() as u64;
                Some(now.plus((cap - acc) / rate + 1))
            })
            .min()
    }

    /// Folds a node event into job state. A run that completes with more CPU
    /// time than its queue allows is failed, not finished.
    pub fn on_fabric_event(&mut self, event: &FabricEvent, store: &QueueStore, fabric: &mut NodeFabric, now: Timestamp) {
        let FabricEvent::ExecutionEnded {
            job: id,
            node,
            outcome,
            epilog,
        } = event
        else {
            return;
        };
        let Some(job) = self.jobs.get_mut(id) else {
            return;
        };
        if !job.outstanding.contains(node) {
            return;
        }
        job.outstanding.retain(|n| n != node);
        job.logs.push(epilog.clone());
        if outcome.is_success() {
            if job.outstanding.is_empty() && job.state == JobState::Running {
                let run_start = job.runs.last().map(|r| r.start);
                let used: u64 = job
                    .logs
                    .iter()
                    .filter(|e| Some(e.start) == run_start && job.assigned_nodes.contains(&e.node))
                    .map(|e| e.cpu_seconds)
                    .sum();
                let cap = store.get(&job.queue).ok().and_then(|q| q.resources_max_cput);
                job.close_run(now);
                if cap.is_some_and(|c| used > c.seconds()) {
                    job.fail_reason = Some(FailReason::CputExceeded);
                    job.transition(JobState::Failed, now, Some("CPUT_EXCEEDED".into()));
                } else {
                    job.transition(JobState::Finished, now, None);
                }
            }
            return;
        }
        let (reason, cause) = match outcome {
            ExecOutcome::JobError => (FailReason::JobError, format!("exit {} on {}", epilog.exit_status, node)),
            _ => (FailReason::NodeLost, format!("lost node {}", node)),
        };
        Self::kill_outstanding(job, fabric, "sibling execution failed");
        job.close_run(now);
        if job.state == JobState::Suspended {
            job.transition(JobState::Stopped, now, Some(cause));
        } else {
            job.fail_reason = Some(reason);
            job.transition(JobState::Failed, now, Some(cause));
        }
    }

    /// Stops or deletes every non-terminal job of a queue (block teardown).
    pub fn drain_queue(&mut self, queue: &str, fabric: &mut NodeFabric, now: Timestamp) -> Vec<JobId> {
        let ids: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| j.queue == queue && matches!(j.state, JobState::Queued | JobState::Running | JobState::Suspended))
            .map(|j| j.id.clone())
            .collect();
        for id in &ids {
            let job = self.jobs.get_mut(id).unwrap();
            match job.state {
                JobState::Queued => job.transition(JobState::Deleted, now, Some("block closed".into())),
                _ => {
                    Self::kill_outstanding(job, fabric, "block closed");
                    job.close_run(now);
                    job.transition(JobState::Stopped, now, Some("block closed".into()));
                }
            }
        }
        if let Some(rt) = self.queues.get_mut(queue) {
            rt.fifo.clear();
        }
        ids
    }

    pub fn fetch_logs(&self, id: &JobId) -> Result<(Vec<EpilogRecord>, Vec<HistoryEntry>), SchedError> {
        let job = self.job(id)?;
        Ok((job.logs.clone(), job.history.clone()))
    }

    /// Jobs holding nodes or waiting in a queue.
    pub fn active_jobs(&self, queue: &str) -> Vec<&Job> {
        self.jobs
            .values()
            .filter(|j| j.queue == queue && matches!(j.state, JobState::Queued | JobState::Running | JobState::Suspended))
            .collect()
    }
}
