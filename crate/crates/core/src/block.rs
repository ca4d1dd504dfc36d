//! Block requests, review, and the node pool that keeps blocks disjoint.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{is_identifier, BlockId, NodeId, RequestId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Period {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Period, BlockError> {
        if start < end {
            Ok(Period { start, end })
        } else {
            Err(BlockError::InvalidPeriod)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestState {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRequest {
    pub id: RequestId,
    pub user: String,
    pub requested_nodes: u32,
    pub period: Period,
    pub project_description: String,
    pub state: RequestState,
    pub submitted: Timestamp,
    pub reviewed: Option<Timestamp>,
    pub rejection_reason: Option<String>,
    pub block: Option<BlockId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockState {
    Approved,
    Activating,
    Active,
    Expired,
    Deactivated,
}

impl BlockState {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockState::Approved => "APPROVED",
            BlockState::Activating => "ACTIVATING",
            BlockState::Active => "ACTIVE",
            BlockState::Expired => "EXPIRED",
            BlockState::Deactivated => "DEACTIVATED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, BlockState::Expired | BlockState::Deactivated)
    }
}

impl fmt::Display for BlockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub request: RequestId,
    pub owner: String,
    pub nodes: Vec<NodeId>,
    pub queue_name: String,
    pub period: Period,
    pub environment_profile: String,
    pub state: BlockState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Free,
    Reserved(BlockId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeactivationCause {
    Admin,
    Expiry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewDecision {
    Approve { nodes: Option<Vec<NodeId>> },
    Reject { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewOutcome {
    Approved(Block),
    Rejected { request: RequestId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPolicy {
    /// Labels users may pick from; the first is the default.
    pub environment_profiles: Vec<String>,
    pub allow_multiple_blocks: bool,
}

impl Default for BlockPolicy {
    fn default() -> Self {
        BlockPolicy {
            environment_profiles: ["openmpi", "lammpi", "mpich2"].iter().map(|s| s.to_string()).collect(),
            allow_multiple_blocks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("user `{0}` already registered")]
    UserExists(String),
    #[error("user `{0}` is not approved")]
    UserNotApproved(String),
    #[error("user `{0}` already holds a block")]
    UserHasBlock(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("period start must precede its end")]
    InvalidPeriod,
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} was already reviewed")]
    AlreadyReviewed(RequestId),
    #[error("nodes not available: {0:?}")]
    NodesUnavailable(Vec<NodeId>),
    #[error("no free nodes")]
    NoFreeNodes,
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {block} is {state}")]
    WrongState { block: BlockId, state: BlockState },
    #[error("node {0} did not boot in time")]
    NodeBootTimeout(NodeId),
    #[error("block {0} usage period is over")]
    PeriodElapsed(BlockId),
    #[error("unknown environment profile `{0}`")]
    UnknownProfile(String),
}

/// Requests, blocks, registered users, and node reservations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockManager {
    policy: BlockPolicy,
    users: BTreeMap<String, bool>,
    requests: BTreeMap<RequestId, BlockRequest>,
    blocks: BTreeMap<BlockId, Block>,
    pool: BTreeMap<NodeId, Slot>,
    next_request: u32,
    next_block: u32,
}

impl BlockManager {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, policy: BlockPolicy) -> BlockManager {
        BlockManager {
            policy,
            users: BTreeMap::new(),
            requests: BTreeMap::new(),
            blocks: BTreeMap::new(),
            pool: nodes.into_iter().map(|n| (n, Slot::Free)).collect(),
            next_request: 0,
            next_block: 0,
        }
    }

    pub fn policy(&self) -> &BlockPolicy {
        &self.policy
    }

    pub fn register_user(&mut self, user: &str) -> Result<(), BlockError> {
        if !is_identifier(user) {
            return Err(BlockError::InvalidArgument("user name must be an identifier".into()));
        }
        if self.users.contains_key(user) {
            return Err(BlockError::UserExists(user.to_string()));
        }
        self.users.insert(user.to_string(), false);
        Ok(())
    }

    pub fn approve_user(&mut self, user: &str) -> Result<(), BlockError> {
        let approved = self
            .users
            .get_mut(user)
            .ok_or_else(|| BlockError::UnknownUser(user.to_string()))?;
        *approved = true;
        Ok(())
    }

    pub fn is_approved(&self, user: &str) -> bool {
        self.users.get(user).copied().unwrap_or(false)
    }

    pub fn request_block(
        &mut self,
        user: &str,
        nodes: u32,
        period: Period,
        description: &str,
        now: Timestamp,
    ) -> Result<&BlockRequest, BlockError> {
        match self.users.get(user) {
            None => return Err(BlockError::UnknownUser(user.to_string())),
            Some(false) => return Err(BlockError::UserNotApproved(user.to_string())),
            Some(true) => {}
        }
        if nodes == 0 {
            return Err(BlockError::InvalidArgument("requested_nodes must be at least 1".into()));
        }
        if period.start >= period.end {
            return Err(BlockError::InvalidPeriod);
        }
        self.next_request += 1;
        let id = RequestId(self.next_request);
        self.requests.insert(
            id,
            BlockRequest {
                id,
                user: user.to_string(),
                requested_nodes: nodes,
                period,
                project_description: description.to_string(),
                state: RequestState::Pending,
                submitted: now,
                reviewed: None,
                rejection_reason: None,
                block: None,
            },
        );
        Ok(&self.requests[&id])
    }

    pub fn free_nodes(&self) -> Vec<NodeId> {
        self.pool
            .iter()
            .filter(|(_, s)| **s == Slot::Free)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn slot(&self, node: &NodeId) -> Option<&Slot> {
        self.pool.get(node)
    }

    pub fn pool(&self) -> impl Iterator<Item = (&NodeId, &Slot)> {
        self.pool.iter()
    }

    /// Approves (allocating nodes) or rejects a pending request.
    pub fn review(&mut self, id: RequestId, decision: ReviewDecision, now: Timestamp) -> Result<ReviewOutcome, BlockError> {
        let request = self.requests.get(&id).ok_or(BlockError::UnknownRequest(id))?;
        if request.state != RequestState::Pending {
            return Err(BlockError::AlreadyReviewed(id));
        }
        match decision {
            ReviewDecision::Reject { reason } => {
                let request = self.requests.get_mut(&id).unwrap();
                request.state = RequestState::Rejected;
                request.reviewed = Some(now);
                request.rejection_reason = Some(reason.clone());
                Ok(ReviewOutcome::Rejected { request: id, reason })
            }
            ReviewDecision::Approve { nodes } => {
                if request.period.end <= now {
                    return Err(BlockError::InvalidPeriod);
                }
                if !self.policy.allow_multiple_blocks
                    && self
                        .blocks
                        .values()
                        .any(|b| b.owner == request.user && !b.state.is_terminal())
                {
                    return Err(BlockError::UserHasBlock(request.user.clone()));
                }
                let free = self.free_nodes();
                if free.is_empty() {
                    return Err(BlockError::NoFreeNodes);
                }
                let allocated = match nodes {
                    Some(list) => {
                        let mut seen: Vec<NodeId> = Vec::new();
                        let bad: Vec<NodeId> = list
                            .iter()
                            .filter(|n| {
                                let dup = seen.contains(*n);
                                seen.push((*n).clone());
                                dup || self.pool.get(n) != Some(&Slot::Free)
                            })
                            .cloned()
                            .collect();
                        if !bad.is_empty() {
                            return Err(BlockError::NodesUnavailable(bad));
                        }
                        if list.is_empty() {
                            return Err(BlockError::InvalidArgument("explicit allocation is empty".into()));
                        }
                        list
                    }
                    None => free
                        .into_iter()
                        .take(request.requested_nodes as usize)
                        .collect(),
                };
                self.next_block += 1;
                let block_id = BlockId(self.next_block);
                for n in &allocated {
                    self.pool.insert(n.clone(), Slot::Reserved(block_id));
                }
                let block = Block {
                    id: block_id,
                    request: id,
                    owner: request.user.clone(),
                    nodes: allocated,
                    queue_name: block_id.queue_name(),
                    period: request.period,
                    environment_profile: self.policy.environment_profiles.first().cloned().unwrap_or_default(),
                    state: BlockState::Approved,
                };
                let request = self.requests.get_mut(&id).unwrap();
                request.state = RequestState::Approved;
                request.reviewed = Some(now);
                request.block = Some(block_id);
                self.blocks.insert(block_id, block.clone());
                Ok(ReviewOutcome::Approved(block))
            }
        }
    }

    pub fn request(&self, id: RequestId) -> Result<&BlockRequest, BlockError> {
        self.requests.get(&id).ok_or(BlockError::UnknownRequest(id))
    }

    pub fn requests(&self) -> impl Iterator<Item = &BlockRequest> {
        self.requests.values()
    }

    pub fn block(&self, id: BlockId) -> Result<&Block, BlockError> {
        self.blocks.get(&id).ok_or(BlockError::UnknownBlock(id))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn block_by_queue(&self, queue: &str) -> Option<&Block> {
        self.blocks.values().find(|b| b.queue_name == queue)
    }

    /// Moves a block between states, checking the expected source state.
    pub(crate) fn transition(&mut self, id: BlockId, from: &[BlockState], to: BlockState) -> Result<&Block, BlockError> {
        let block = self.blocks.get_mut(&id).ok_or(BlockError::UnknownBlock(id))?;
        if !from.contains(&block.state) {
            return Err(BlockError::WrongState { block: id, state: block.state });
        }
        block.state = to;
        Ok(block)
    }

    /// Returns a terminal block's nodes to the pool.
    pub(crate) fn release(&mut self, id: BlockId) {
        for slot in self.pool.values_mut() {
            if *slot == Slot::Reserved(id) {
                *slot = Slot::Free;
            }
        }
    }

    pub fn choose_environment(&mut self, id: BlockId, profile: &str) -> Result<&Block, BlockError> {
        if !self.policy.environment_profiles.iter().any(|p| p == profile) {
            return Err(BlockError::UnknownProfile(profile.to_string()));
        }
        let block = self.blocks.get_mut(&id).ok_or(BlockError::UnknownBlock(id))?;
        if block.state.is_terminal() {
            return Err(BlockError::WrongState { block: id, state: block.state });
        }
        block.environment_profile = profile.to_string();
        Ok(block)
    }

    /// Earliest period end among blocks still holding nodes.
    pub fn next_expiry(&self) -> Option<Timestamp> {
        self.blocks
            .values()
            .filter(|b| matches!(b.state, BlockState::Approved | BlockState::Active))
            .map(|b| b.period.end)
            .min()
    }
}
