//! The composed cluster: node fabric, queue store, blocks and scheduler on
//! one virtual clock.
//!
//! All mutations assume the caller has moved the clock with
//! [`Cluster::advance_to`] first. Time-driven effects (boot completion, job
//! completion, CPU-time kills, block expiry) happen inside `advance_to`, in
//! time order, followed by a dispatch pass.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::block::{
    Block, BlockError, BlockManager, BlockPolicy, BlockRequest, BlockState, DeactivationCause, Period,
    ReviewDecision, ReviewOutcome,
};
use crate::fabric::{FabricConfig, FabricError, FabricEvent, NodeFabric, NodeMetrics, NodeState};
use crate::ids::{BlockId, JobId, NodeId, RequestId, Timestamp};
use crate::qmgr::{block_template, Attribute, CpuTime, Directive, Operator, QmgrError, QueueConfig, QueueStore};
use crate::scheduler::{Job, JobAction, JobSpec, SchedError, Scheduler};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub pool_size: u32,
    pub fabric: FabricConfig,
    /// Written into each generated queue; `None` leaves the queue uncapped.
    pub default_cput: Option<CpuTime>,
    /// Simulated seconds a node may take to come up during activation.
    pub boot_timeout: u64,
    pub policy: BlockPolicy,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            pool_size: 16,
            fabric: FabricConfig::default(),
            default_cput: Some(CpuTime(24 * 3600)),
            boot_timeout: 10,
            policy: BlockPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Qmgr(#[from] QmgrError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub block: BlockId,
    pub power_replies: Vec<String>,
    pub directives: Vec<Directive>,
    pub script: String,
    pub activated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node: NodeId,
    pub state: NodeState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStatus {
    pub block: Block,
    pub nodes: Vec<NodeStatus>,
    pub queue: Option<QueueConfig>,
    pub active_jobs: Vec<JobId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    config: ClusterConfig,
    now: Timestamp,
    fabric: NodeFabric,
    queues: QueueStore,
    blocks: BlockManager,
    scheduler: Scheduler,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Cluster {
        let fabric = NodeFabric::with_pool(config.pool_size, config.fabric);
        let blocks = BlockManager::new(fabric.node_ids().cloned(), config.policy.clone());
        Cluster {
            config,
            now: Timestamp::ZERO,
            fabric,
            queues: QueueStore::new(),
            blocks,
            scheduler: Scheduler::new(),
        }
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn fabric(&self) -> &NodeFabric {
        &self.fabric
    }

    pub fn queues(&self) -> &QueueStore {
        &self.queues
    }

    pub fn blocks(&self) -> &BlockManager {
        &self.blocks
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    /// Test and emulation hook: direct access to the hardware layer.
    pub fn fabric_mut(&mut self) -> &mut NodeFabric {
        &mut self.fabric
    }

    fn next_wakeup(&self) -> Option<Timestamp> {
        [
            self.fabric.next_event_time(),
            self.scheduler.next_cput_deadline(&self.queues, &self.fabric),
            self.blocks.next_expiry(),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Runs the clock forward to `t`. Moving backwards is a no-op.
    pub fn advance_to(&mut self, t: Timestamp) {
        if t < self.now {
            return;
        }
        while let Some(next) = self.next_wakeup().filter(|n| *n <= t) {
            self.step(next.max(self.now));
        }
        self.step(t);
    }

    fn step(&mut self, t: Timestamp) {
        self.now = t;
        self.fabric.advance_to(t);
        self.drain_fabric_events();
        let queues: Vec<String> = self.queues.queues().map(|q| q.name.clone()).collect();
        for q in &queues {
            self.scheduler.enforce_cput(q, &self.queues, &mut self.fabric, t);
        }
        let expiring: Vec<BlockId> = self
            .blocks
            .blocks()
            .filter(|b| matches!(b.state, BlockState::Approved | BlockState::Active) && b.period.end <= t)
            .map(|b| b.id)
            .collect();
        for id in expiring {
            self.expire(id);
        }
        self.dispatch_all();
    }

    fn drain_fabric_events(&mut self) {
        loop {
            let events = self.fabric.take_events();
            if events.is_empty() {
                break;
            }
            for e in &events {
                if let FabricEvent::ExecutionEnded { .. } = e {
                    self.scheduler.on_fabric_event(e, &self.queues, &mut self.fabric, self.now);
                }
            }
        }
    }

    fn dispatch_all(&mut self) {
        let queues: Vec<String> = self.queues.queues().map(|q| q.name.clone()).collect();
        for q in &queues {
            self.scheduler.dispatch(q, &self.queues, &mut self.fabric, self.now);
        }
    }

    pub fn register_user(&mut self, user: &str) -> Result<(), ClusterError> {
        Ok(self.blocks.register_user(user)?)
    }

    pub fn approve_user(&mut self, user: &str) -> Result<(), ClusterError> {
        Ok(self.blocks.approve_user(user)?)
    }

    pub fn request_block(
        &mut self,
        user: &str,
        nodes: u32,
        period: Period,
        description: &str,
    ) -> Result<BlockRequest, ClusterError> {
        Ok(self
            .blocks
            .request_block(user, nodes, period, description, self.now)?
            .clone())
    }

    pub fn review(&mut self, request: RequestId, decision: ReviewDecision) -> Result<ReviewOutcome, ClusterError> {
        Ok(self.blocks.review(request, decision, self.now)?)
    }

    /// Powers the block's nodes, waits (on the virtual clock) for every one
    /// to come up, then generates and applies the block's queue.
    ///
    /// On boot timeout every block node is powered off again and the block
    /// is left APPROVED with no queue.
    pub fn activate(&mut self, id: BlockId) -> Result<ActivationReport, ClusterError> {
        let block = self.blocks.block(id)?.clone();
        if block.state != BlockState::Approved {
            return Err(BlockError::WrongState { block: id, state: block.state }.into());
        }
        if self.now >= block.period.end {
            self.expire(id);
            return Err(BlockError::PeriodElapsed(id).into());
        }
        self.blocks
            .transition(id, &[BlockState::Approved], BlockState::Activating)?;

        let power_replies: Vec<String> = block
            .nodes
            .iter()
            .map(|n| self.fabric.power_exec(&format!("PWR ON {}", n.protocol_number())))
            .collect();

        let deadline = self.now.plus(self.config.boot_timeout);
        let all_up = |c: &Cluster| {
            block
                .nodes
                .iter()
                .all(|n| matches!(c.fabric.state(n), Ok(NodeState::Up | NodeState::Busy)))
        };
        while !all_up(self) {
            match self.next_wakeup().filter(|t| *t <= deadline) {
                Some(t) => self.step(t.max(self.now)),
                None => {
                    self.step(deadline);
                    break;
                }
            }
        }
        // expiry may have raced the boot
        if self.blocks.block(id)?.state != BlockState::Activating {
            return Err(BlockError::PeriodElapsed(id).into());
        }
        if let Some(stuck) = block
            .nodes
            .iter()
            .find(|n| !matches!(self.fabric.state(n), Ok(NodeState::Up | NodeState::Busy)))
            .cloned()
        {
            for n in &block.nodes {
                self.fabric.power_exec(&format!("PWR OFF {}", n.protocol_number()));
            }
            self.drain_fabric_events();
            self.blocks
                .transition(id, &[BlockState::Activating], BlockState::Approved)?;
            return Err(BlockError::NodeBootTimeout(stuck).into());
        }

        let directives = block_template(&block.queue_name, &block.nodes, &block.owner, self.config.default_cput);
        if let Err(e) = self.queues.apply_all(&directives) {
            for n in &block.nodes {
                self.fabric.power_exec(&format!("PWR OFF {}", n.protocol_number()));
            }
            self.drain_fabric_events();
            self.blocks
                .transition(id, &[BlockState::Activating], BlockState::Approved)?;
            return Err(e.into());
        }
        self.blocks
            .transition(id, &[BlockState::Activating], BlockState::Active)?;
        self.dispatch_all();
        Ok(ActivationReport {
            block: id,
            power_replies,
            script: crate::qmgr::render(&directives),
            directives,
            activated_at: self.now,
        })
    }

    fn close_block(&mut self, id: BlockId, to: BlockState) {
        let block = self.blocks.block(id).expect("known block").clone();
        if self.queues.contains(&block.queue_name) {
            let q = &block.queue_name;
            let off = [
                Directive::set(q, Attribute::Enabled, Operator::Assign, "False"),
                Directive::set(q, Attribute::Started, Operator::Assign, "False"),
            ];
            self.queues.apply_all(&off).expect("queue exists");
            self.scheduler.drain_queue(q, &mut self.fabric, self.now);
        }
        for n in &block.nodes {
            self.fabric.power_exec(&format!("PWR OFF {}", n.protocol_number()));
        }
        self.drain_fabric_events();
        self.blocks
            .transition(id, &[BlockState::Active, BlockState::Approved], to)
            .expect("closable block");
        self.blocks.release(id);
    }

    fn expire(&mut self, id: BlockId) {
        self.close_block(id, BlockState::Expired);
    }

    pub fn deactivate(&mut self, id: BlockId, cause: DeactivationCause) -> Result<Block, ClusterError> {
        let block = self.blocks.block(id)?;
        if block.state != BlockState::Active {
            return Err(BlockError::WrongState { block: id, state: block.state }.into());
        }
        let to = match cause {
            DeactivationCause::Admin => BlockState::Deactivated,
            DeactivationCause::Expiry => BlockState::Expired,
        };
        self.close_block(id, to);
        self.dispatch_all();
        Ok(self.blocks.block(id)?.clone())
    }

    pub fn block_status(&self, id: BlockId) -> Result<BlockStatus, ClusterError> {
        let block = self.blocks.block(id)?.clone();
        let nodes = block
            .nodes
            .iter()
            .map(|n| NodeStatus {
                node: n.clone(),
                state: self.fabric.state(n).unwrap_or(NodeState::Off),
            })
            .collect();
        let queue = self.queues.get(&block.queue_name).ok().cloned();
        let active_jobs = self
            .scheduler
            .active_jobs(&block.queue_name)
            .into_iter()
            .map(|j| j.id.clone())
            .collect();
        Ok(BlockStatus {
            block,
            nodes,
            queue,
            active_jobs,
        })
    }

    pub fn choose_environment(&mut self, id: BlockId, profile: &str) -> Result<Block, ClusterError> {
        Ok(self.blocks.choose_environment(id, profile)?.clone())
    }

    pub fn submit_job(&mut self, user: &str, queue: &str, spec: JobSpec) -> Result<JobId, ClusterError> {
        if !self
            .config
            .policy
            .environment_profiles
            .iter()
            .any(|p| *p == spec.environment_profile)
        {
            return Err(BlockError::UnknownProfile(spec.environment_profile).into());
        }
        let id = self.scheduler.submit(&self.queues, user, queue, spec, self.now)?;
        self.dispatch_all();
        Ok(id)
    }

    pub fn job(&self, id: &JobId) -> Result<&Job, ClusterError> {
        Ok(self.scheduler.job(id)?)
    }

    pub fn job_action(&mut self, id: &JobId, action: JobAction) -> Result<Job, ClusterError> {
        let job = self
            .scheduler
            .control(id, action, &self.queues, &mut self.fabric, self.now)?
            .clone();
        self.dispatch_all();
        Ok(self.scheduler.job(&job.id)?.clone())
    }

    /// Sends one power-protocol line to the controller.
    pub fn power_exec(&mut self, line: &str) -> String {
        let reply = self.fabric.power_exec(line);
        self.drain_fabric_events();
        self.dispatch_all();
        reply
    }

    pub fn node_report(&self, node: &NodeId) -> Result<NodeMetrics, ClusterError> {
        Ok(self.fabric.mom_report(node)?)
    }

    pub fn inject_boot_failure(&mut self, node: &NodeId, hang: bool) -> Result<(), ClusterError> {
        Ok(self.fabric.inject_boot_failure(node, hang)?)
    }

    pub fn inject_fault(&mut self, node: &NodeId) -> Result<(), ClusterError> {
        self.fabric.inject_fault(node)?;
        self.drain_fabric_events();
        self.dispatch_all();
        Ok(())
    }

    /// Checks the cross-module invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        use crate::block::Slot;
        // node exclusivity among live blocks
        let live: Vec<&Block> = self
            .blocks
            .blocks()
            .filter(|b| matches!(b.state, BlockState::Active | BlockState::Activating))
            .collect();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                if let Some(n) = a.nodes.iter().find(|n| b.nodes.contains(n)) {
                    return Err(format!("{} shared by blocks {} and {}", n, a.id, b.id));
                }
            }
        }
        // conservation and reservation agreement
        let pool: Vec<_> = self.blocks.pool().collect();
        if pool.len() != self.fabric.len() {
            return Err("pool size changed".to_string());
        }
        for b in self.blocks.blocks() {
            for n in &b.nodes {
                let reserved = self.blocks.slot(n) == Some(&Slot::Reserved(b.id));
                if b.state.is_terminal() == reserved {
                    return Err(format!("node {} reservation disagrees with block {} ({})", n, b.id, b.state));
                }
            }
        }
        // queue/block bijection
        for b in self.blocks.blocks().filter(|b| b.state == BlockState::Active) {
            let q = self
                .queues
                .get(&b.queue_name)
                .map_err(|_| format!("active block {} has no queue", b.id))?;
            if q.acl_users != [b.owner.clone()] || q.acl_hosts != b.nodes {
                return Err(format!("queue {} does not mirror block {}", q.name, b.id));
            }
        }
        // jobs confined to their queue's hosts and no node oversubscribed
        let mut holders: Vec<(&NodeId, &JobId)> = Vec::new();
        for j in self.scheduler.jobs() {
            if j.state.is_live_on_nodes() == j.assigned_nodes.is_empty() {
                return Err(format!("job {} in {} with {} nodes", j.id, j.state, j.assigned_nodes.len()));
            }
            let hosts = self.queues.dispatch_targets(&j.queue).unwrap_or_default();
            for n in &j.assigned_nodes {
                if !hosts.contains(n) {
                    return Err(format!("job {} runs on {} outside its queue", j.id, n));
                }
                if let Some((_, other)) = holders.iter().find(|(h, _)| *h == n) {
                    return Err(format!("node {} held by {} and {}", n, other, j.id));
                }
                holders.push((n, &j.id));
            }
        }
        Ok(())
    }
}
