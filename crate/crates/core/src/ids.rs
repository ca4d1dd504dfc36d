//! Identifier newtypes shared by every subsystem.

use alloc::format;
use alloc::string::{String, ToString};
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdError {
    #[error("invalid node identifier `{0}`")]
    InvalidNode(String),
    #[error("invalid job identifier `{0}`")]
    InvalidJob(String),
}

/// Seconds on the cluster clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn plus(self, secs: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(secs))
    }

    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// A compute node identifier of the form `<prefix><digits>`, e.g. `node03`.
///
/// Ordering is natural: prefix first, then the numeric suffix, so `node9`
/// sorts before `node10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId {
    raw: String,
    split: usize,
    ordinal: u32,
}

impl NodeId {
    pub fn parse(raw: &str) -> Result<NodeId, IdError> {
        if raw.is_empty() || !raw.chars().all(is_ident_char) {
            return Err(IdError::InvalidNode(raw.to_string()));
        }
        let split = raw
            .char_indices()
            .rev()
            .take_while(|(_, c)| c.is_ascii_digit())
            .last()
            .map(|(i, _)| i)
            .ok_or_else(|| IdError::InvalidNode(raw.to_string()))?;
        if split == 0 || !raw[..split].chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(IdError::InvalidNode(raw.to_string()));
        }
        let ordinal = raw[split..]
            .parse::<u32>()
            .map_err(|_| IdError::InvalidNode(raw.to_string()))?;
        Ok(NodeId {
            raw: raw.to_string(),
            split,
            ordinal,
        })
    }

    /// Pool naming: `node01`, `node02`, ... widening past 99.
    pub fn numbered(ordinal: u32) -> NodeId {
        NodeId::parse(&format!("node{:02}", ordinal)).expect("well-formed node id")
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn prefix(&self) -> &str {
        &self.raw[..self.split]
    }

    pub fn ordinal(&self) -> u32 {
        self.ordinal
    }

    /// Number used on the power protocol: the 2-digit (or wider) suffix.
    pub fn protocol_number(&self) -> String {
        format!("{:02}", self.ordinal)
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.prefix()
            .cmp(other.prefix())
            .then(self.ordinal.cmp(&other.ordinal))
            .then_with(|| self.raw.cmp(&other.raw))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for NodeId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::parse(s)
    }
}

impl TryFrom<String> for NodeId {
    type Error = IdError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        NodeId::parse(&value)
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u32);

impl BlockId {
    /// `block01`, `block02`, ... widening past 99.
    pub fn queue_name(self) -> String {
        format!("block{:02}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u32);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// PBS-style job id: `<queue>.<seq>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct JobId {
    queue: String,
    seq: u64,
}

impl JobId {
    pub fn new(queue: &str, seq: u64) -> JobId {
        JobId {
            queue: queue.to_string(),
            seq,
        }
    }

    pub fn queue(&self) -> &str {
        &self.queue
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.queue, self.seq)
    }
}

impl FromStr for JobId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (queue, seq) = s
            .rsplit_once('.')
            .ok_or_else(|| IdError::InvalidJob(s.to_string()))?;
        if queue.is_empty() || !queue.chars().all(is_ident_char) {
            return Err(IdError::InvalidJob(s.to_string()));
        }
        let seq = seq
            .parse::<u64>()
            .map_err(|_| IdError::InvalidJob(s.to_string()))?;
        Ok(JobId::new(queue, seq))
    }
}

impl TryFrom<String> for JobId {
    type Error = IdError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<JobId> for String {
    fn from(id: JobId) -> String {
        id.to_string()
    }
}

/// True for identifiers usable as user or queue names.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_ident_char)
}
