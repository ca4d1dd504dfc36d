//! Gateway-side command filter.
//!
//! Every raw command is classified by its first token, checked against the
//! session's block, and either forwarded or discarded. The decision logic in
//! this module is pure; forwarding lives in [`crate::system`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::block::{Block, BlockState};
use crate::ids::{BlockId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CommandKind {
    Pbs,
    Os,
    Comport,
    Unclassified,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Pbs => "PBS",
            CommandKind::Os => "OS",
            CommandKind::Comport => "COMPORT",
            CommandKind::Unclassified => "UNCLASSIFIED",
        }
    }

    pub fn parse(s: &str) -> Option<CommandKind> {
        [CommandKind::Pbs, CommandKind::Os, CommandKind::Comport, CommandKind::Unclassified]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRegistry {
    pbs: BTreeSet<String>,
    os: BTreeSet<String>,
    comport: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("verb {0:?} appears in more than one set")]
    Overlap(String),
}

pub const PBS_VERBS: [&str; 6] = ["qsub", "qstat", "qdel", "qsig", "qhold", "qrls"];
pub const OS_VERBS: [&str; 8] = ["ls", "cat", "cp", "mv", "rm", "mkdir", "upload", "download"];
pub const COMPORT_VERBS: [&str; 2] = ["power", "status"];

impl Default for CommandRegistry {
    fn default() -> Self {
        CommandRegistry::new(&PBS_VERBS, &OS_VERBS, &COMPORT_VERBS).expect("builtin sets are disjoint")
    }
}

impl CommandRegistry {
    pub fn new(pbs: &[&str], os: &[&str], comport: &[&str]) -> Result<CommandRegistry, RegistryError> {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let reg = CommandRegistry {
            pbs: set(pbs),
            os: set(os),
            comport: set(comport),
        };
        for v in &reg.pbs {
            if reg.os.contains(v) || reg.comport.contains(v) {
                return Err(RegistryError::Overlap(v.clone()));
            }
        }
        if let Some(v) = reg.os.intersection(&reg.comport).next() {
            return Err(RegistryError::Overlap(v.clone()));
        }
        Ok(reg)
    }

    pub fn lookup(&self, verb: &str) -> CommandKind {
        if self.pbs.contains(verb) {
            CommandKind::Pbs
        } else if self.os.contains(verb) {
            CommandKind::Os
        } else if self.comport.contains(verb) {
            CommandKind::Comport
        } else {
            CommandKind::Unclassified
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouterError {
    #[error("empty command")]
    EmptyCommand,
    #[error("command was not allowed: {0}")]
    NotAllowed(Verdict),
    #[error("master channel is down")]
    ChannelDown,
    #[error("master channel authentication failed")]
    AuthFailed,
    #[error("hardware fault: {0}")]
    HardwareFault(String),
    #[error("malformed frame: {0}")]
    BadFrame(String),
}

pub fn classify(raw: &str, registry: &CommandRegistry) -> Result<CommandKind, RouterError> {
    let verb = raw.split_whitespace().next().ok_or(RouterError::EmptyCommand)?;
    Ok(registry.lookup(verb))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum DiscardReason {
    Unclassified,
    UnknownBlock,
    NotOwner,
    BlockNotActive,
    NodeOutsideBlock(String),
    QueueOutsideBlock(String),
    PathEscapesWorkspace(String),
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::Unclassified => f.write_str("unclassified command"),
            DiscardReason::UnknownBlock => f.write_str("unknown block"),
            DiscardReason::NotOwner => f.write_str("not owner"),
            DiscardReason::BlockNotActive => f.write_str("block not active"),
            DiscardReason::NodeOutsideBlock(n) => write!(f, "node {} outside block", n),
            DiscardReason::QueueOutsideBlock(q) => write!(f, "queue {} outside block", q),
            DiscardReason::PathEscapesWorkspace(p) => write!(f, "path {} escapes workspace", p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "UPPERCASE")]
pub enum Verdict {
    Pending,
    Allowed,
    Discarded { reason: DiscardReason },
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pending => f.write_str("PENDING"),
            Verdict::Allowed => f.write_str("ALLOWED"),
            Verdict::Discarded { reason } => write!(f, "DISCARDED({})", reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub raw: String,
    pub kind: CommandKind,
    pub session_user: String,
    pub target_block: BlockId,
    pub verdict: Verdict,
}

impl Command {
    pub fn new(raw: &str, user: &str, block: BlockId, registry: &CommandRegistry) -> Result<Command, RouterError> {
        Ok(Command {
            kind: classify(raw, registry)?,
            raw: raw.trim().to_string(),
            session_user: user.to_string(),
            target_block: block,
            verdict: Verdict::Pending,
        })
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn has_numbered_prefix(token: &str, prefix: &str) -> bool {
    token.len() > prefix.len()
        && token[..prefix.len()].eq_ignore_ascii_case(prefix)
        && token[prefix.len()..].bytes().all(|b| b.is_ascii_digit())
}

/// Words of the command after the verb, split on anything that cannot be
/// part of an identifier.
fn fragments<'a>(args: &'a [&'a str]) -> impl Iterator<Item = String> + 'a {
    args.iter()
        .flat_map(|a| a.split(|c: char| !is_ident_char(c)))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
}

/// Node names mentioned anywhere in the arguments (`node` followed by
/// digits, case-insensitive).
pub fn node_refs(raw: &str) -> Vec<String> {
    let args: Vec<&str> = raw.split_whitespace().skip(1).collect();
    fragments(&args).filter(|t| has_numbered_prefix(t, "node")).collect()
}

/// Queue names mentioned in the arguments: any `block<digits>` word, plus
/// the value of every `-q` option.
pub fn queue_refs(raw: &str) -> Vec<String> {
    let args: Vec<&str> = raw.split_whitespace().skip(1).collect();
    let mut out: Vec<String> = fragments(&args).filter(|t| has_numbered_prefix(t, "block")).collect();
    let mut i = 0;
    while i < args.len() {
        let a = args[i];
        if a == "-q" {
            if let Some(v) = args.get(i + 1) {
                out.push(v.split('@').next().unwrap_or("").to_string());
                i += 1;
            }
        } else if let Some(v) = a.strip_prefix("-q") {
            out.push(v.trim_start_matches('=').split('@').next().unwrap_or("").to_string());
        }
        i += 1;
    }
    out
}

/// Home directory of a user's virtual workspace.
pub fn workspace_root(user: &str) -> String {
    format!("/home/{}", user)
}

/// Resolves `path` against `root`, collapsing `.` and `..`. Returns `None`
/// when `..` climbs above `/`.
pub fn normalize_path(root: &str, path: &str) -> Option<String> {
    let joined = if path.starts_with('/') {
        path.to_string()
    } else {
        format!("{}/{}", root, path)
    };
    let mut parts: Vec<&str> = Vec::new();
    for seg in joined.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            s => parts.push(s),
        }
    }
    Some(format!("/{}", parts.join("/")))
}

pub fn within_root(root: &str, normalized: &str) -> bool {
    normalized == root || normalized.strip_prefix(root).is_some_and(|rest| rest.starts_with('/'))
}

/// Path arguments of an OS command. `upload` carries its data as the second
/// operand, which is not a path.
pub fn path_args(raw: &str) -> Vec<&str> {
    let mut words = raw.split_whitespace();
    let verb = words.next().unwrap_or("");
    let operands: Vec<&str> = words.filter(|w| !w.starts_with('-')).collect();
    match verb {
        "upload" => operands.into_iter().take(1).collect(),
        _ => operands,
    }
}

/// Decides whether `cmd` may leave the gateway. Pure: the same inputs always
/// give the same verdict. Clauses are tried in order and the first failure
/// is reported.
pub fn authorize(cmd: &Command, block: Option<&Block>) -> Verdict {
    let discard = |reason| Verdict::Discarded { reason };
    if cmd.kind == CommandKind::Unclassified {
        return discard(DiscardReason::Unclassified);
    }
    let Some(block) = block.filter(|b| b.id == cmd.target_block) else {
        return discard(DiscardReason::UnknownBlock);
    };
    if block.owner != cmd.session_user {
        return discard(DiscardReason::NotOwner);
    }
    if block.state != BlockState::Active {
        return discard(DiscardReason::BlockNotActive);
    }
    if let Some(n) = node_refs(&cmd.raw)
        .into_iter()
        .find(|n| !block.nodes.iter().any(|b| b.as_str() == n))
    {
        return discard(DiscardReason::NodeOutsideBlock(n));
    }
    if let Some(q) = queue_refs(&cmd.raw).into_iter().find(|q| *q != block.queue_name) {
        return discard(DiscardReason::QueueOutsideBlock(q));
    }
    if cmd.kind == CommandKind::Os {
        let root = workspace_root(&cmd.session_user);
        for p in path_args(&cmd.raw) {
            match normalize_path(&root, p) {
                Some(n) if within_root(&root, &n) => {}
                _ => return discard(DiscardReason::PathEscapesWorkspace(p.to_string())),
            }
        }
    }
    Verdict::Allowed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ForwardTarget {
    Master,
    Hardware,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub command: Command,
    pub verdict: Verdict,
    pub forwarded_to: ForwardTarget,
    /// False when forwarding was attempted and the channel refused it.
    pub delivered: bool,
}

/// Append-only, totally ordered audit trail.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn append(&mut self, timestamp: Timestamp, command: &Command, forwarded_to: ForwardTarget, delivered: bool) -> u64 {
        let seq = self.records.len() as u64 + 1;
        self.records.push(AuditRecord {
            seq,
            timestamp,
            command: command.clone(),
            verdict: command.verdict.clone(),
            forwarded_to,
            delivered,
        });
        seq
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A command as it travels to the master node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: CommandKind,
    pub user: String,
    pub block: BlockId,
    pub raw: String,
}

fn length_prefixed(body: String) -> String {
    format!("{} {}\n", body.len(), body)
}

fn split_length_prefixed(text: &str) -> Result<&str, RouterError> {
    let bad = |m: &str| RouterError::BadFrame(m.to_string());
    let text = text.strip_suffix('\n').ok_or_else(|| bad("missing newline"))?;
    let (len, body) = text.split_once(' ').ok_or_else(|| bad("missing length"))?;
    let len: usize = len.parse().map_err(|_| bad("bad length"))?;
    if len != body.len() {
        return Err(bad("length mismatch"));
    }
    Ok(body)
}

impl Frame {
    pub fn encode(&self) -> String {
        length_prefixed(format!(
            "{} {} {} {}",
            self.kind,
            self.user,
            self.block,
            B64.encode(self.raw.as_bytes())
        ))
    }

    pub fn decode(text: &str) -> Result<Frame, RouterError> {
        let bad = |m: &str| RouterError::BadFrame(m.to_string());
        let body = split_length_prefixed(text)?;
        let parts: Vec<&str> = body.split(' ').collect();
        let [kind, user, block, payload] = parts[..] else {
            return Err(bad("expected four fields"));
        };
        let raw = B64.decode(payload).map_err(|_| bad("bad base64"))?;
        Ok(Frame {
            kind: CommandKind::parse(kind).ok_or_else(|| bad("bad kind"))?,
            user: user.to_string(),
            block: BlockId(block.parse().map_err(|_| bad("bad block id"))?),
            raw: String::from_utf8(raw).map_err(|_| bad("payload is not utf-8"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    pub payload: String,
}

impl Response {
    pub fn ok(payload: impl Into<String>) -> Response {
        Response { ok: true, payload: payload.into() }
    }

    pub fn err(payload: impl Into<String>) -> Response {
        Response { ok: false, payload: payload.into() }
    }

    pub fn encode(&self) -> String {
        let status = if self.ok { "OK" } else { "ERR" };
        length_prefixed(format!("{} {}", status, B64.encode(self.payload.as_bytes())))
    }

    pub fn decode(text: &str) -> Result<Response, RouterError> {
        let bad = |m: &str| RouterError::BadFrame(m.to_string());
        let body = split_length_prefixed(text)?;
        let (status, payload) = body.split_once(' ').ok_or_else(|| bad("missing payload"))?;
        let ok = match status {
            "OK" => true,
            "ERR" => false,
            _ => return Err(bad("bad status")),
        };
        let payload = B64.decode(payload).map_err(|_| bad("bad base64"))?;
        Ok(Response {
            ok,
            payload: String::from_utf8(payload).map_err(|_| bad("payload is not utf-8"))?,
        })
    }
}

/// Translates an allowed COMPORT command to a power-protocol line. `None`
/// when the command names no node or an unknown action.
pub fn comport_line(raw: &str) -> Option<String> {
    let words: Vec<&str> = raw.split_whitespace().collect();
    let node = |w: &str| crate::ids::NodeId::parse(w).ok().map(|n| n.protocol_number());
    match words[..] {
        ["power", action, n] => {
            let action = match action.to_ascii_lowercase().as_str() {
                "on" => "ON",
                "off" => "OFF",
                _ => return None,
            };
            Some(format!("PWR {} {}", action, node(n)?))
        }
        ["status", n] => Some(format!("STA {}", node(n)?)),
        _ => None,
    }
}
