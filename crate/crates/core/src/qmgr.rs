//! Queue-manager script subset: the queue → (hosts, users) mapping that
//! confines a block.
//!
//! Grammar, one directive per line:
//!
//! ```text
//! create queue NAME
//! set queue NAME ATTR (= | +=) VALUE
//! # comment
//! ```
//!
//! Blank lines and comments are skipped. Everything else yields exactly one
//! [`Directive`] or one [`QmgrError::Syntax`] carrying the 1-based line number.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{is_identifier, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verb {
    Create,
    Set,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    /// `=`
    Assign,
    /// `+=`
    Append,
}

impl Operator {
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Assign => "=",
            Operator::Append => "+=",
        }
    }
}

/// One parsed script line. `attribute`, `operator` and `value` are all
/// present for `Set` and all absent for `Create`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub verb: Verb,
    pub queue: String,
    pub attribute: Option<String>,
    pub operator: Option<Operator>,
    pub value: Option<String>,
}

impl Directive {
    pub fn create(queue: &str) -> Directive {
        Directive {
            verb: Verb::Create,
            queue: queue.to_string(),
            attribute: None,
            operator: None,
            value: None,
        }
    }

    pub fn set(queue: &str, attribute: Attribute, operator: Operator, value: &str) -> Directive {
        Directive {
            verb: Verb::Set,
            queue: queue.to_string(),
            attribute: Some(attribute.name().to_string()),
            operator: Some(operator),
            value: Some(value.to_string()),
        }
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verb {
            Verb::Create => write!(f, "create queue {}", self.queue),
            Verb::Set => write!(
                f,
                "set queue {} {} {} {}",
                self.queue,
                self.attribute.as_deref().unwrap_or(""),
                self.operator.map(Operator::as_str).unwrap_or(""),
                self.value.as_deref().unwrap_or("")
            ),
        }
    }
}

/// The closed attribute set understood by [`QueueStore::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Attribute {
    QueueType,
    AclHostEnable,
    AclHosts,
    AclUserEnable,
    AclUsers,
    ResourcesMaxCput,
    Enabled,
    Started,
}

impl Attribute {
    pub const ALL: [Attribute; 8] = [
        Attribute::QueueType,
        Attribute::AclHostEnable,
        Attribute::AclHosts,
        Attribute::AclUserEnable,
        Attribute::AclUsers,
        Attribute::ResourcesMaxCput,
        Attribute::Enabled,
        Attribute::Started,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::QueueType => "queue_type",
            Attribute::AclHostEnable => "acl_host_enable",
            Attribute::AclHosts => "acl_hosts",
            Attribute::AclUserEnable => "acl_user_enable",
            Attribute::AclUsers => "acl_users",
            Attribute::ResourcesMaxCput => "resources_max.cput",
            Attribute::Enabled => "enabled",
            Attribute::Started => "started",
        }
    }

    pub fn from_name(name: &str) -> Option<Attribute> {
        Attribute::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn is_list(self) -> bool {
        matches!(self, Attribute::AclHosts | Attribute::AclUsers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueType {
    Execution,
}

/// CPU-time limit with one-second resolution, written `HH:MM:SS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CpuTime(pub u64);

impl CpuTime {
    pub fn seconds(self) -> u64 {
        self.0
    }

    /// Accepts `HH:MM:SS` (hours may exceed 24) or a plain second count.
    pub fn parse(text: &str) -> Option<CpuTime> {
        let parts: Vec<&str> = text.split(':').collect();
        let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        match parts.as_slice() {
            [secs] if digits(secs) => secs.parse().ok().map(CpuTime),
            [h, m, s] if digits(h) && m.len() == 2 && s.len() == 2 && digits(m) && digits(s) => {
                let h: u64 = h.parse().ok()?;
                let m: u64 = m.parse().ok()?;
                let s: u64 = s.parse().ok()?;
                if m >= 60 || s >= 60 {
                    return None;
                }
                h.checked_mul(3600)?.checked_add(m * 60 + s).map(CpuTime)
            }
            _ => None,
        }
    }
}

impl fmt::Display for CpuTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        write!(f, "{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub name: String,
    pub queue_type: QueueType,
    pub acl_host_enable: bool,
    pub acl_hosts: Vec<NodeId>,
    pub acl_user_enable: bool,
    pub acl_users: Vec<String>,
    /// `None` means no cap.
    pub resources_max_cput: Option<CpuTime>,
    pub enabled: bool,
    pub started: bool,
}

impl QueueConfig {
    /// Inactive until configured.
    pub fn new(name: &str) -> QueueConfig {
        QueueConfig {
            name: name.to_string(),
            queue_type: QueueType::Execution,
            acl_host_enable: false,
            acl_hosts: Vec::new(),
            acl_user_enable: false,
            acl_users: Vec::new(),
            resources_max_cput: None,
            enabled: false,
            started: false,
        }
    }

    /// Canonical directive sequence, in the attribute order of a hand-written
    /// block definition.
    pub fn directives(&self) -> Vec<Directive> {
        let q = self.name.as_str();
        let b = |v: bool| if v { "True" } else { "False" };
        let mut out = vec![
            Directive::create(q),
            Directive::set(q, Attribute::QueueType, Operator::Assign, "Execution"),
            Directive::set(q, Attribute::AclHostEnable, Operator::Assign, b(self.acl_host_enable)),
        ];
        for (i, host) in self.acl_hosts.iter().enumerate() {
            let op = if i == 0 { Operator::Assign } else { Operator::Append };
            out.push(Directive::set(q, Attribute::AclHosts, op, host.as_str()));
        }
        out.push(Directive::set(q, Attribute::AclUserEnable, Operator::Assign, b(self.acl_user_enable)));
        for (i, user) in self.acl_users.iter().enumerate() {
            let op = if i == 0 { Operator::Assign } else { Operator::Append };
            out.push(Directive::set(q, Attribute::AclUsers, op, user));
        }
        if let Some(cput) = self.resources_max_cput {
            out.push(Directive::set(
                q,
                Attribute::ResourcesMaxCput,
                Operator::Assign,
                &cput.to_string(),
            ));
        }
        out.push(Directive::set(q, Attribute::Enabled, Operator::Assign, b(self.enabled)));
        out.push(Directive::set(q, Attribute::Started, Operator::Assign, b(self.started)));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntaxReason {
    UnknownVerb,
    MissingQueueKeyword,
    MissingQueueName,
    InvalidQueueName,
    MissingAttribute,
    MissingOperator,
    UnknownOperator,
    MissingValue,
    TrailingTokens,
}

impl fmt::Display for SyntaxReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SyntaxReason::UnknownVerb => "unknown verb",
            SyntaxReason::MissingQueueKeyword => "expected `queue`",
            SyntaxReason::MissingQueueName => "missing queue name",
            SyntaxReason::InvalidQueueName => "invalid queue name",
            SyntaxReason::MissingAttribute => "missing attribute",
            SyntaxReason::MissingOperator => "missing operator",
            SyntaxReason::UnknownOperator => "unknown operator",
            SyntaxReason::MissingValue => "missing value",
            SyntaxReason::TrailingTokens => "trailing tokens",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QmgrError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: SyntaxReason },
    #[error("unknown queue `{0}`")]
    UnknownQueue(String),
    #[error("queue `{0}` already exists")]
    QueueExists(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{attribute}` cannot take `{value}`")]
    TypeMismatch { attribute: String, value: String },
}

#[derive(Debug, PartialEq, Eq)]
enum Token<'a> {
    Word(&'a str),
    Op(&'a str),
}

fn lex(line: &str) -> Vec<Token<'_>> {
    let bytes = line.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'=' {
            tokens.push(Token::Op(&line[i..i + 1]));
            i += 1;
        } else if (c == b'+' || c == b'-') && bytes.get(i + 1) == Some(&b'=') {
            tokens.push(Token::Op(&line[i..i + 2]));
            i += 2;
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i];
                if c.is_ascii_whitespace()
                    || c == b'='
                    || ((c == b'+' || c == b'-') && bytes.get(i + 1) == Some(&b'='))
                {
                    break;
                }
                i += 1;
            }
            tokens.push(Token::Word(&line[start..i]));
        }
    }
    tokens
}

/// Parses one line. `Ok(None)` for blank and comment lines.
pub fn parse_line(line_no: usize, text: &str) -> Result<Option<Directive>, QmgrError> {
    let text = text.strip_suffix('\r').unwrap_or(text);
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let err = |reason| QmgrError::Syntax { line: line_no, reason };
    let tokens = lex(trimmed);
    let mut it = tokens.into_iter();

    let verb = match it.next() {
        Some(Token::Word("create")) => Verb::Create,
        Some(Token::Word("set")) => Verb::Set,
        _ => return Err(err(SyntaxReason::UnknownVerb)),
    };
    match it.next() {
        Some(Token::Word("queue")) => {}
        _ => return Err(err(SyntaxReason::MissingQueueKeyword)),
    }
    let queue = match it.next() {
        Some(Token::Word(name)) if is_identifier(name) => name,
        Some(Token::Word(_)) => return Err(err(SyntaxReason::InvalidQueueName)),
        _ => return Err(err(SyntaxReason::MissingQueueName)),
    };

    if verb == Verb::Create {
        if it.next().is_some() {
            return Err(err(SyntaxReason::TrailingTokens));
        }
        return Ok(Some(Directive::create(queue)));
    }

    let attribute = match it.next() {
        Some(Token::Word(a)) => a,
        _ => return Err(err(SyntaxReason::MissingAttribute)),
    };
    let operator = match it.next() {
        Some(Token::Op("=")) => Operator::Assign,
        Some(Token::Op("+=")) => Operator::Append,
        Some(Token::Op(_)) => return Err(err(SyntaxReason::UnknownOperator)),
        _ => return Err(err(SyntaxReason::MissingOperator)),
    };
    let value = match it.next() {
        Some(Token::Word(v)) => v,
        _ => return Err(err(SyntaxReason::MissingValue)),
    };
    if it.next().is_some() {
        return Err(err(SyntaxReason::TrailingTokens));
    }
    Ok(Some(Directive {
        verb,
        queue: queue.to_string(),
        attribute: Some(attribute.to_string()),
        operator: Some(operator),
        value: Some(value.to_string()),
    }))
}

/// Parses a whole script; stops at the first bad line.
pub fn parse_script(text: &str) -> Result<Vec<Directive>, QmgrError> {
    let mut out = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        if let Some(d) = parse_line(idx + 1, line)? {
            out.push(d);
        }
    }
    Ok(out)
}

/// Renders directives one per line, LF-terminated.
pub fn render(directives: &[Directive]) -> String {
    let mut out = String::new();
    for d in directives {
        out.push_str(&d.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    QueueDisabled,
    QueueStopped,
    NotInUserAcl,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::QueueDisabled => "queue disabled",
            DenyReason::QueueStopped => "queue not started",
            DenyReason::NotInUserAcl => "not in user ACL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Allow,
    Deny(DenyReason),
}

impl Admission {
    pub fn is_allow(&self) -> bool {
        matches!(self, Admission::Allow)
    }
}

/// All queues, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStore {
    queues: BTreeMap<String, QueueConfig>,
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "True" => Some(true),
        "False" => Some(false),
        _ => None,
    }
}

impl QueueStore {
    pub fn new() -> QueueStore {
        QueueStore::default()
    }

    pub fn get(&self, name: &str) -> Result<&QueueConfig, QmgrError> {
        self.queues
            .get(name)
            .ok_or_else(|| QmgrError::UnknownQueue(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.queues.contains_key(name)
    }

    pub fn queues(&self) -> impl Iterator<Item = &QueueConfig> {
        self.queues.values()
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    /// Applies one directive. On error the store is left unchanged.
    pub fn apply(&mut self, d: &Directive) -> Result<(), QmgrError> {
        match d.verb {
            Verb::Create => {
                if self.queues.contains_key(&d.queue) {
                    return Err(QmgrError::QueueExists(d.queue.clone()));
                }
                self.queues.insert(d.queue.clone(), QueueConfig::new(&d.queue));
                Ok(())
            }
            Verb::Set => {
                let queue = self
                    .queues
                    .get_mut(&d.queue)
                    .ok_or_else(|| QmgrError::UnknownQueue(d.queue.clone()))?;
                let attr_name = d.attribute.as_deref().unwrap_or("");
                let attribute = Attribute::from_name(attr_name)
                    .ok_or_else(|| QmgrError::UnknownAttribute(attr_name.to_string()))?;
                let value = d.value.as_deref().unwrap_or("");
                let operator = d.operator.unwrap_or(Operator::Assign);
                let mismatch = || QmgrError::TypeMismatch {
                    attribute: attribute.name().to_string(),
                    value: value.to_string(),
                };
                if operator == Operator::Append && !attribute.is_list() {
                    return Err(mismatch());
                }
                match attribute {
                    Attribute::QueueType => {
                        if value != "Execution" {
                            return Err(mismatch());
                        }
                        queue.queue_type = QueueType::Execution;
                    }
                    Attribute::AclHostEnable => {
                        queue.acl_host_enable = parse_bool(value).ok_or_else(mismatch)?
                    }
                    Attribute::AclUserEnable => {
                        queue.acl_user_enable = parse_bool(value).ok_or_else(mismatch)?
                    }
                    Attribute::Enabled => queue.enabled = parse_bool(value).ok_or_else(mismatch)?,
                    Attribute::Started => queue.started = parse_bool(value).ok_or_else(mismatch)?,
                    Attribute::ResourcesMaxCput => {
                        let cput = CpuTime::parse(value)
                            .filter(|c| c.seconds() > 0)
                            .ok_or_else(mismatch)?;
                        queue.resources_max_cput = Some(cput);
                    }
                    Attribute::AclHosts => {
                        let node = NodeId::parse(value).map_err(|_| mismatch())?;
                        match operator {
                            Operator::Assign => queue.acl_hosts = vec![node],
                            Operator::Append => {
                                if !queue.acl_hosts.contains(&node) {
                                    queue.acl_hosts.push(node);
                                }
                            }
                        }
                    }
                    Attribute::AclUsers => {
                        if !is_identifier(value) {
                            return Err(mismatch());
                        }
                        match operator {
                            Operator::Assign => queue.acl_users = vec![value.to_string()],
                            Operator::Append => {
                                if !queue.acl_users.iter().any(|u| u == value) {
                                    queue.acl_users.push(value.to_string());
                                }
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Applies every directive in order, all-or-nothing.
    pub fn apply_all(&mut self, directives: &[Directive]) -> Result<(), QmgrError> {
        let mut next = self.clone();
        for d in directives {
            next.apply(d)?;
        }
        *self = next;
        Ok(())
    }

    /// Parses and applies a script, all-or-nothing.
    pub fn apply_script(&mut self, text: &str) -> Result<(), QmgrError> {
        let directives = parse_script(text)?;
        self.apply_all(&directives)
    }

    /// Canonical script text for every queue, in queue-name order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for q in self.queues.values() {
            out.push_str(&render(&q.directives()));
        }
        out
    }

    pub fn admits_user(&self, queue: &str, user: &str) -> Result<Admission, QmgrError> {
        let q = self.get(queue)?;
        Ok(if !q.enabled {
            Admission::Deny(DenyReason::QueueDisabled)
        } else if !q.started {
            Admission::Deny(DenyReason::QueueStopped)
        } else if q.acl_user_enable && !q.acl_users.iter().any(|u| u == user) {
            Admission::Deny(DenyReason::NotInUserAcl)
        } else {
            Admission::Allow
        })
    }

    /// The only node set jobs of `queue` may run on, in ACL order.
    pub fn dispatch_targets(&self, queue: &str) -> Result<Vec<NodeId>, QmgrError> {
        Ok(self.get(queue)?.acl_hosts.clone())
    }
}

/// Directive sequence generated when a block is activated.
pub fn block_template(queue: &str, nodes: &[NodeId], owner: &str, cput: Option<CpuTime>) -> Vec<Directive> {
    let mut out = vec![
        Directive::create(queue),
        Directive::set(queue, Attribute::QueueType, Operator::Assign, "Execution"),
        Directive::set(queue, Attribute::AclHostEnable, Operator::Assign, "False"),
    ];
    for (i, node) in nodes.iter().enumerate() {
        let op = if i == 0 { Operator::Assign } else { Operator::Append };
        out.push(Directive::set(queue, Attribute::AclHosts, op, node.as_str()));
    }
    out.push(Directive::set(queue, Attribute::AclUserEnable, Operator::Assign, "True"));
    out.push(Directive::set(queue, Attribute::AclUsers, Operator::Assign, owner));
    if let Some(cput) = cput {
        out.push(Directive::set(
            queue,
            Attribute::ResourcesMaxCput,
            Operator::Assign,
            &format!("{}", cput),
        ));
    }
    out.push(Directive::set(queue, Attribute::Enabled, Operator::Assign, "True"));
    out.push(Directive::set(queue, Attribute::Started, Operator::Assign, "True"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = "create queue block01
set queue block01 queue_type = Execution
set queue block01 acl_host_enable = False
set queue block01 acl_hosts = node01
set queue block01 acl_hosts += node04
set queue block01 acl_hosts += node03
set queue block01 acl_hosts += node02
set queue block01 acl_user_enable = True
set queue block01 acl_users = user01
set queue block01 resources_max.cput = 24:00:00
set queue block01 enabled = True
set queue block01 started = True
";

    fn nodes(names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| NodeId::parse(n).unwrap()).collect()
    }

    fn sample_store() -> QueueStore {
        let mut store = QueueStore::new();
        store.apply_script(SAMPLE).unwrap();
        store
    }

    #[test]
    fn parses_create() {
        let d = parse_script("create queue block01").unwrap();
        assert_eq!(d, vec![Directive::create("block01")]);
    }

    #[test]
    fn parses_append() {
        let d = parse_script("set queue block01 acl_hosts += node04").unwrap();
        assert_eq!(
            d,
            vec![Directive::set("block01", Attribute::AclHosts, Operator::Append, "node04")]
        );
    }

    #[test]
    fn empty_and_comment_only_input() {
        assert!(parse_script("").unwrap().is_empty());
        assert!(parse_script("# hello\n\n   \n").unwrap().is_empty());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let cases = [
            ("set queue block01", 1, SyntaxReason::MissingAttribute),
            ("\n\nset queue block01 enabled True", 3, SyntaxReason::MissingOperator),
            ("delete queue block01", 1, SyntaxReason::UnknownVerb),
            ("create queue block01 extra", 1, SyntaxReason::TrailingTokens),
            ("set queue block01 enabled = True x", 1, SyntaxReason::TrailingTokens),
            ("set queue block01 acl_hosts -= node01", 1, SyntaxReason::UnknownOperator),
            ("set queue block01 enabled =", 1, SyntaxReason::MissingValue),
            ("create block01", 1, SyntaxReason::MissingQueueKeyword),
            ("create queue", 1, SyntaxReason::MissingQueueName),
        ];
        for (text, line, reason) in cases {
            assert_eq!(parse_script(text), Err(QmgrError::Syntax { line, reason }), "{text}");
        }
    }

    #[test]
    fn whitespace_and_crlf_are_tolerated() {
        let d = parse_script("  set   queue block01\tacl_hosts+=node04\r\n").unwrap();
        assert_eq!(
            d,
            vec![Directive::set("block01", Attribute::AclHosts, Operator::Append, "node04")]
        );
    }

    #[test]
    fn sample_script_builds_expected_queue() {
        let store = sample_store();
        assert_eq!(store.len(), 1);
        let q = store.get("block01").unwrap();
        assert_eq!(q.queue_type, QueueType::Execution);
        assert!(!q.acl_host_enable);
        assert_eq!(q.acl_hosts, nodes(&["node01", "node04", "node03", "node02"]));
        assert!(q.acl_user_enable);
        assert_eq!(q.acl_users, vec!["user01".to_string()]);
        assert_eq!(q.resources_max_cput, Some(CpuTime(86_400)));
        assert!(q.enabled && q.started);
    }

    #[test]
    fn set_on_missing_queue() {
        let mut store = QueueStore::new();
        let err = store
            .apply(&Directive::set("nope", Attribute::Enabled, Operator::Assign, "True"))
            .unwrap_err();
        assert_eq!(err, QmgrError::UnknownQueue("nope".into()));
    }

    #[test]
    fn duplicate_append_is_ignored() {
        let mut store = QueueStore::new();
        store
            .apply_script(
                "create queue q\nset queue q acl_hosts = node01\nset queue q acl_hosts += node01\nset queue q acl_hosts += node01",
            )
            .unwrap();
        assert_eq!(store.get("q").unwrap().acl_hosts, nodes(&["node01"]));
    }

    #[test]
    fn type_errors() {
        let mut store = QueueStore::new();
        store.apply(&Directive::create("q")).unwrap();
        let bad = [
            Directive::set("q", Attribute::Enabled, Operator::Append, "True"),
            Directive::set("q", Attribute::Enabled, Operator::Assign, "true"),
            Directive::set("q", Attribute::QueueType, Operator::Assign, "Route"),
            Directive::set("q", Attribute::ResourcesMaxCput, Operator::Assign, "00:00:00"),
            Directive::set("q", Attribute::ResourcesMaxCput, Operator::Assign, "1:99:00"),
            Directive::set("q", Attribute::AclHosts, Operator::Assign, "not a node"),
        ];
        for d in bad {
            assert!(matches!(store.apply(&d), Err(QmgrError::TypeMismatch { .. })), "{d}");
        }
        let unknown = parse_script("set queue q max_running = 4").unwrap();
        assert_eq!(
            store.apply(&unknown[0]),
            Err(QmgrError::UnknownAttribute("max_running".into()))
        );
        assert_eq!(store.get("q").unwrap(), &QueueConfig::new("q"));
    }

    #[test]
    fn create_twice_fails() {
        let mut store = QueueStore::new();
        store.apply(&Directive::create("q")).unwrap();
        assert_eq!(
            store.apply(&Directive::create("q")),
            Err(QmgrError::QueueExists("q".into()))
        );
    }

    #[test]
    fn apply_all_is_atomic() {
        let mut store = QueueStore::new();
        let err = store.apply_script("create queue q\nset queue q enabled = yes");
        assert!(err.is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn serialize_matches_sample_layout() {
        let store = sample_store();
        let expected: String = SAMPLE
            .lines()
            .map(|l| format!("{}\n", l.trim_end()))
            .collect();
        assert_eq!(store.serialize(), expected);
        let mut again = QueueStore::new();
        again.apply_script(&store.serialize()).unwrap();
        assert_eq!(again, store);
    }

    #[test]
    fn serialize_empty_store_and_empty_lists() {
        assert_eq!(QueueStore::new().serialize(), "");
        let mut store = QueueStore::new();
        store.apply(&Directive::create("q")).unwrap();
        let text = store.serialize();
        assert!(!text.contains("acl_hosts"));
        assert!(!text.contains("acl_users"));
        assert!(!text.contains("cput"));
    }

    #[test]
    fn admission() {
        let mut store = sample_store();
        assert_eq!(store.admits_user("block01", "user01"), Ok(Admission::Allow));
        assert_eq!(
            store.admits_user("block01", "user02"),
            Ok(Admission::Deny(DenyReason::NotInUserAcl))
        );
        store
            .apply_script("set queue block01 acl_user_enable = False")
            .unwrap();
        assert_eq!(store.admits_user("block01", "anyone"), Ok(Admission::Allow));
        store.apply_script("set queue block01 started = False").unwrap();
        assert_eq!(
            store.admits_user("block01", "user01"),
            Ok(Admission::Deny(DenyReason::QueueStopped))
        );
        assert!(store.admits_user("missing", "user01").is_err());
    }

    #[test]
    fn dispatch_targets_follow_acl_order() {
        let mut store = sample_store();
        assert_eq!(
            store.dispatch_targets("block01").unwrap(),
            nodes(&["node01", "node04", "node03", "node02"])
        );
        store.apply_script("set queue block01 acl_hosts += node05").unwrap();
        assert_eq!(
            store.dispatch_targets("block01").unwrap(),
            nodes(&["node01", "node04", "node03", "node02", "node05"])
        );
        store.apply(&Directive::create("empty")).unwrap();
        assert!(store.dispatch_targets("empty").unwrap().is_empty());
    }

    #[test]
    fn template_reproduces_sample() {
        let d = block_template(
            "block01",
            &nodes(&["node01", "node04", "node03", "node02"]),
            "user01",
            Some(CpuTime(86_400)),
        );
        assert_eq!(d, parse_script(SAMPLE).unwrap());
    }

    #[test]
    fn cpu_time_format() {
        assert_eq!(CpuTime::parse("24:00:00"), Some(CpuTime(86_400)));
        assert_eq!(CpuTime::parse("100:00:01"), Some(CpuTime(360_001)));
        assert_eq!(CpuTime::parse("90"), Some(CpuTime(90)));
        assert_eq!(CpuTime::parse("1:2:3"), None);
        assert_eq!(CpuTime(86_401).to_string(), "24:00:01");
    }
}
