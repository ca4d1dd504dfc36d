//! Request handling: authentication, the route table, and the commit path
//! that writes each mutation to the log before it becomes visible.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use openpc_core::block::{BlockError, RequestState, ReviewDecision};
use openpc_core::cluster::ClusterError;
use openpc_core::fabric::FabricError;
use openpc_core::flood::{self, FloodConfig, FloodError, OutputFormat};
use openpc_core::ids::{BlockId, JobId, NodeId, RequestId, Timestamp};
use openpc_core::qmgr::{render, QmgrError};
use openpc_core::router::RouterError;
use openpc_core::scheduler::{Job, JobAction, JobSpec, SchedError};
use openpc_core::system::Routed;
use openpc_core::fabric::Payload;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ServiceConfig;
use crate::event::{Event, FaultKind, Mutation, Role};
use crate::state::{hash_password, AppState, ApplyError};
use crate::store::{EventStore, StorageError};

/// Seconds on the service clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

/// Seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A clock tests move by hand. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start: u64) -> ManualClock {
        ManualClock(Arc::new(AtomicU64::new(start)))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiRequest {
    pub method: Method,
    /// Path with optional `?query`.
    pub path: String,
    pub body: String,
    pub token: Option<String>,
}

impl ApiRequest {
    pub fn get(path: &str, token: Option<&str>) -> ApiRequest {
        ApiRequest {
            method: Method::Get,
            path: path.to_string(),
            body: String::new(),
            token: token.map(str::to_string),
        }
    }

    pub fn post(path: &str, token: Option<&str>, body: Value) -> ApiRequest {
        ApiRequest {
            method: Method::Post,
            path: path.to_string(),
            body: body.to_string(),
            token: token.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Json(Value),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Body,
}

impl ApiResponse {
    fn json(status: u16, value: Value) -> ApiResponse {
        ApiResponse {
            status,
            body: Body::Json(value),
        }
    }

    pub fn json_body(&self) -> Option<&Value> {
        match &self.body {
            Body::Json(v) => Some(v),
            Body::Text(_) => None,
        }
    }

    pub fn text_body(&self) -> Option<&str> {
        match &self.body {
            Body::Text(t) => Some(t),
            Body::Json(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Any valid session.
    Authenticated,
    Admin,
    /// The owner of the addressed entity, or an admin. For job submission
    /// ownership means membership in the queue's user list; for gateway
    /// commands it is the router's owner check.
    Owner,
}

/// Every route the service answers, with the access rule it enforces.
pub const ROUTES: &[(Method, &str, Access)] = &[
    (Method::Post, "/users", Access::Public),
    (Method::Get, "/users", Access::Admin),
    (Method::Post, "/users/{name}/approve", Access::Admin),
    (Method::Post, "/sessions", Access::Public),
    (Method::Get, "/environments", Access::Authenticated),
    (Method::Get, "/nodes", Access::Authenticated),
    (Method::Post, "/nodes/{id}/power", Access::Owner),
    (Method::Get, "/nodes/{id}/status", Access::Authenticated),
    (Method::Post, "/nodes/{id}/faults", Access::Admin),
    (Method::Post, "/blocks/requests", Access::Authenticated),
    (Method::Get, "/blocks/requests", Access::Authenticated),
    (Method::Post, "/blocks/requests/{id}/review", Access::Admin),
    (Method::Get, "/blocks", Access::Authenticated),
    (Method::Post, "/blocks/{id}/activate", Access::Admin),
    (Method::Post, "/blocks/{id}/deactivate", Access::Admin),
    (Method::Get, "/blocks/{id}", Access::Owner),
    (Method::Get, "/blocks/{id}/queue", Access::Owner),
    (Method::Post, "/blocks/{id}/environment", Access::Owner),
    (Method::Post, "/queues/{q}/jobs", Access::Owner),
    (Method::Get, "/jobs/{id}", Access::Owner),
    (Method::Post, "/jobs/{id}/actions", Access::Owner),
    (Method::Get, "/jobs/{id}/logs", Access::Owner),
    (Method::Post, "/bench/flood", Access::Admin),
    (Method::Get, "/bench/flood/{run}", Access::Authenticated),
    (Method::Get, "/bench/flood/{run}/csv", Access::Authenticated),
    (Method::Post, "/gateway/commands", Access::Owner),
    (Method::Get, "/gateway/audit", Access::Admin),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn unauthorized() -> ApiError {
        ApiError::new(401, "missing or expired token")
    }

    fn forbidden(what: impl Into<String>) -> ApiError {
        ApiError::new(403, what)
    }

    fn not_found(what: impl Into<String>) -> ApiError {
        ApiError::new(404, what)
    }

    fn invalid(what: impl Into<String>) -> ApiError {
        ApiError::new(422, what)
    }
}

fn block_status(e: &BlockError) -> u16 {
    match e {
        BlockError::UnknownUser(_) | BlockError::UnknownRequest(_) | BlockError::UnknownBlock(_) => 404,
        BlockError::UserNotApproved(_) => 403,
        BlockError::InvalidArgument(_) | BlockError::InvalidPeriod | BlockError::UnknownProfile(_) => 422,
        _ => 409,
    }
}

fn fabric_status(e: &FabricError) -> u16 {
    match e {
        FabricError::UnknownNode(_) => 404,
        _ => 409,
    }
}

fn cluster_status(e: &ClusterError) -> u16 {
    match e {
        ClusterError::Block(b) => block_status(b),
        ClusterError::Sched(s) => match s {
            SchedError::UnknownQueue(_) | SchedError::UnknownJob(_) => 404,
            SchedError::AccessDenied(_) => 403,
            SchedError::TooManyNodes { .. } | SchedError::InvalidSpec(_) => 422,
            SchedError::IllegalTransition { .. } => 409,
            SchedError::Fabric(f) => fabric_status(f),
        },
        ClusterError::Qmgr(QmgrError::UnknownQueue(_)) => 404,
        ClusterError::Qmgr(QmgrError::QueueExists(_)) => 409,
        ClusterError::Qmgr(_) => 422,
        ClusterError::Fabric(f) => fabric_status(f),
    }
}

impl From<ApplyError> for ApiError {
    fn from(e: ApplyError) -> ApiError {
        let status = match &e {
            ApplyError::Cluster(c) => cluster_status(c),
            ApplyError::Router(r) => match r {
                RouterError::EmptyCommand => 422,
                RouterError::NotAllowed(_) => 403,
                RouterError::ChannelDown => 503,
                RouterError::AuthFailed | RouterError::HardwareFault(_) | RouterError::BadFrame(_) => 502,
            },
            ApplyError::Flood(f) => match f {
                FloodError::InsufficientNodes { .. } => 409,
                FloodError::InvalidConfig(_) => 422,
                FloodError::RaggedSamples(_) => 500,
            },
            ApplyError::UnknownUser(_) => 404,
            ApplyError::UserExists(_) => 409,
            ApplyError::PowerRefused(_) => 409,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<ClusterError> for ApiError {
    fn from(e: ClusterError) -> ApiError {
        ApiError::new(cluster_status(&e), e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecoverError {
    #[error("corrupt event log at seq {0}")]
    CorruptLog(u64),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: AppState,
}

/// Rebuilds the state from a log, starting from `snapshot` when it agrees
/// with the log. Returns the state and the last sequence number.
pub fn recover(
    config: &ServiceConfig,
    snapshot: Option<&str>,
    lines: &[String],
) -> Result<(AppState, u64), RecoverError> {
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let expected = i as u64 + 1;
        let event = Event::from_line(line).map_err(|_| RecoverError::CorruptLog(expected))?;
        if event.seq != expected {
            return Err(RecoverError::CorruptLog(expected));
        }
        events.push(event);
    }
    let from_snapshot = snapshot
        .and_then(|text| serde_json::from_str::<Snapshot>(text).ok())
        .filter(|s| s.seq as usize <= events.len());
    let (mut state, start) = match from_snapshot {
        Some(s) => (s.state, s.seq as usize),
        None => (AppState::pristine(config), 0),
    };
    for e in &events[start..] {
        state
            .apply(&e.mutation, e.timestamp)
            .map_err(|_| RecoverError::CorruptLog(e.seq))?;
    }
    Ok((state, events.len() as u64))
}

#[derive(Debug, Clone)]
struct Session {
    username: String,
    expires_at: u64,
}

struct Principal {
    username: String,
    role: Role,
}

impl Principal {
    fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }

    fn require_admin(&self) -> Result<(), ApiError> {
        if self.is_admin() {
            Ok(())
        } else {
            Err(ApiError::forbidden("administrator role required"))
        }
    }

    fn require_owner_or_admin(&self, owner: &str) -> Result<(), ApiError> {
        if self.is_admin() || self.username == owner {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!("owned by another user ({})", owner)))
        }
    }
}

pub struct ApiService {
    config: ServiceConfig,
    state: AppState,
    store: Box<dyn EventStore>,
    clock: Box<dyn Clock>,
    sessions: HashMap<String, Session>,
    last_seq: u64,
    since_snapshot: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    username: String,
    password: String,
    display_name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginBody {
    username: String,
    password: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    action: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultBody {
    kind: FaultKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRequestBody {
    nodes: u32,
    start: Option<u64>,
    end: u64,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewBody {
    decision: String,
    nodes: Option<Vec<String>>,
    reason: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentBody {
    profile: String,
}

fn one() -> u32 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JobBody {
    #[serde(default = "one")]
    nodes: u32,
    cpu_seconds: u64,
    profile: Option<String>,
    payload_name: Option<String>,
    #[serde(default)]
    payload_bytes: u64,
    #[serde(default)]
    fail: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewayBody {
    block: u32,
    command: String,
}

fn parse_body<T: DeserializeOwned>(req: &ApiRequest) -> Result<T, ApiError> {
    let text = if req.body.trim().is_empty() { "{}" } else { req.body.as_str() };
    serde_json::from_str(text).map_err(|e| ApiError::invalid(format!("bad request body: {}", e)))
}

fn parse_block(raw: &str) -> Result<BlockId, ApiError> {
    raw.parse()
        .map(BlockId)
        .map_err(|_| ApiError::not_found(format!("unknown block `{}`", raw)))
}

fn parse_node(raw: &str) -> Result<NodeId, ApiError> {
    NodeId::parse(raw).map_err(|_| ApiError::not_found(format!("unknown node `{}`", raw)))
}

fn parse_job(raw: &str) -> Result<JobId, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::not_found(format!("unknown job `{}`", raw)))
}

fn query_param<'a>(query: Option<&'a str>, key: &str) -> Option<&'a str> {
    query?
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn job_view(job: &Job) -> Value {
    let mut v = serde_json::to_value(job).expect("jobs serialize");
    let allowed: Vec<&str> = JobAction::ALL
        .iter()
        .filter(|a| a.target(job.state).is_some())
        .map(|a| a.as_str())
        .collect();
    v["allowed_actions"] = json!(allowed);
    v
}

fn flood_value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Array(items) => items
            .iter()
            .map(flood_value_text)
            .collect::<Option<Vec<_>>>()
            .map(|parts| parts.join(",")),
        _ => None,
    }
}

impl ApiService {
    /// Recovers from `store`, then makes sure the configured admin exists.
    pub fn open(
        config: ServiceConfig,
        mut store: Box<dyn EventStore>,
        clock: Box<dyn Clock>,
    ) -> Result<ApiService, RecoverError> {
        let lines = store.read_log()?;
        let snapshot = store.read_snapshot()?;
        let (state, last_seq) = recover(&config, snapshot.as_deref(), &lines)?;
        let mut service = ApiService {
            config,
            state,
            store,
            clock,
            sessions: HashMap::new(),
            last_seq,
            since_snapshot: 0,
        };
        if !service.state.users.contains_key(&service.config.admin.username) {
            let admin = service.config.admin.clone();
            let salt = new_salt();
            let m = Mutation::UserRegistered {
                password_hash: hash_password(&salt, &admin.password),
                username: admin.username,
                display_name: admin.display_name,
                role: Role::Admin,
                approved: true,
                salt,
            };
            service.commit(m).map_err(|e| match e.status {
                500 => RecoverError::Storage(StorageError::Refused(e.message)),
                _ => RecoverError::CorruptLog(last_seq + 1),
            })?;
        }
        Ok(service)
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn state_hash(&self) -> String {
        self.state.hash()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// The later of the wall clock and the virtual clock.
    pub fn now(&self) -> Timestamp {
        Timestamp(self.clock.now()).max(self.state.now())
    }

    /// The state as a reader sees it right now. The live state only moves
    /// when an event is committed.
    fn view(&self) -> AppState {
        let mut v = self.state.clone();
        v.system.cluster.advance_to(self.now());
        v
    }

    /// Applies `m` to a copy, persists it, and only then installs the copy.
    fn commit(&mut self, m: Mutation) -> Result<Value, ApiError> {
        let at = self.now();
        let mut next = self.state.clone();
        let doc = next.apply(&m, at)?;
        let event = Event {
            seq: self.last_seq + 1,
            timestamp: at,
            mutation: m,
        };
        self.store
            .append(&event.to_line())
            .map_err(|e| ApiError::new(500, e.to_string()))?;
        self.state = next;
        self.last_seq = event.seq;
        self.since_snapshot += 1;
        if self.config.snapshot_every > 0 && self.since_snapshot >= self.config.snapshot_every {
            self.write_snapshot();
        }
        Ok(doc)
    }

    fn write_snapshot(&mut self) {
        let snap = Snapshot {
            seq: self.last_seq,
            state: self.state.clone(),
        };
        let text = serde_json::to_string(&snap).expect("state serializes");
        // The log stays authoritative, so a failed snapshot is only retried later.
        if self.store.write_snapshot(&text).is_ok() {
            self.since_snapshot = 0;
        }
    }

    fn authenticate(&mut self, req: &ApiRequest) -> Result<Principal, ApiError> {
        let token = req.token.as_deref().ok_or_else(ApiError::unauthorized)?;
        let now = self.clock.now();
        let session = match self.sessions.get(token) {
            Some(s) if s.expires_at > now => s.clone(),
            Some(_) => {
                self.sessions.remove(token);
                return Err(ApiError::unauthorized());
            }
            None => return Err(ApiError::unauthorized()),
        };
        let account = self
            .state
            .users
            .get(&session.username)
            .ok_or_else(ApiError::unauthorized)?;
        Ok(Principal {
            username: account.username.clone(),
            role: account.role,
        })
    }

    pub fn handle(&mut self, req: &ApiRequest) -> ApiResponse {
        match self.route(req) {
            Ok(resp) => resp,
            Err(e) => ApiResponse::json(e.status, json!({ "error": e.message })),
        }
    }

    fn route(&mut self, req: &ApiRequest) -> Result<ApiResponse, ApiError> {
        let (path, query) = match req.path.split_once('?') {
            Some((p, q)) => (p, Some(q)),
            None => (req.path.as_str(), None),
        };
        let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
        use Method::{Get, Post};
        let ok = |v: Value| Ok(ApiResponse::json(200, v));
        let created = |v: Value| Ok(ApiResponse::json(201, v));

        // Public routes first.
        match (req.method, segs.as_slice()) {
            (Post, ["users"]) => return created(self.register(req)?),
            (Post, ["sessions"]) => return created(self.login(req)?),
            _ => {}
        }
        if !ROUTES.iter().any(|(m, tpl, _)| *m == req.method && template_matches(tpl, &segs)) {
            return Err(ApiError::not_found(format!("no route for {} {}", req.method.as_str(), path)));
        }
        let who = self.authenticate(req)?;

        match (req.method, segs.as_slice()) {
            (Get, ["users"]) => {
                who.require_admin()?;
                ok(json!(self.state.users.values().map(|u| u.view()).collect::<Vec<_>>()))
            }
            (Post, ["users", name, "approve"]) => {
                who.require_admin()?;
                ok(self.commit(Mutation::UserApproved {
                    username: name.to_string(),
                })?)
            }
            (Get, ["environments"]) => ok(json!(self.config.environment_profiles)),
            (Get, ["nodes"]) => {
                let view = self.view();
                let c = view.cluster();
                let nodes: Vec<Value> = c
                    .fabric()
                    .node_ids()
                    .map(|n| {
                        let mut v = serde_json::to_value(c.node_report(n).expect("pool node")).unwrap();
                        v["block"] = match c.blocks().slot(n) {
                            Some(openpc_core::block::Slot::Reserved(b)) => json!(b),
                            _ => Value::Null,
                        };
                        v
                    })
                    .collect();
                ok(json!(nodes))
            }
            (Post, ["nodes", id, "power"]) => {
                let node = parse_node(id)?;
                let body: ActionBody = parse_body(req)?;
                let on = match body.action.as_str() {
                    "on" => true,
                    "off" => false,
                    other => return Err(ApiError::invalid(format!("power action must be on or off, not `{}`", other))),
                };
                self.state.cluster().node_report(&node)?;
                if !who.is_admin() && self.state.active_owner_of(&node) != Some(who.username.as_str()) {
                    return Err(ApiError::forbidden(format!("{} is not in an active block you own", node)));
                }
                ok(self.commit(Mutation::NodePowered { node, on })?)
            }
            (Get, ["nodes", id, "status"]) => {
                let node = parse_node(id)?;
                let view = self.view();
                ok(serde_json::to_value(view.cluster().node_report(&node)?).unwrap())
            }
            (Post, ["nodes", id, "faults"]) => {
                who.require_admin()?;
                let node = parse_node(id)?;
                let body: FaultBody = parse_body(req)?;
                ok(self.commit(Mutation::NodeFaultInjected { node, fault: body.kind })?)
            }
            (Post, ["blocks", "requests"]) => {
                let body: BlockRequestBody = parse_body(req)?;
                let start = body.start.map(Timestamp).unwrap_or_else(|| self.now());
                created(self.commit(Mutation::BlockRequested {
                    user: who.username,
                    nodes: body.nodes,
                    start,
                    end: Timestamp(body.end),
                    description: body.description,
                })?)
            }
            (Get, ["blocks", "requests"]) => {
                let wanted = match query_param(query, "state") {
                    None => None,
                    Some(s) => Some(match s.to_ascii_lowercase().as_str() {
                        "pending" => RequestState::Pending,
                        "approved" => RequestState::Approved,
                        "rejected" => RequestState::Rejected,
                        other => return Err(ApiError::invalid(format!("unknown request state `{}`", other))),
                    }),
                };
                let list: Vec<_> = self
                    .state
                    .cluster()
                    .blocks()
                    .requests()
                    .filter(|r| who.is_admin() || r.user == who.username)
                    .filter(|r| wanted.is_none_or(|w| r.state == w))
                    .collect();
                ok(json!(list))
            }
            (Post, ["blocks", "requests", id, "review"]) => {
                who.require_admin()?;
                let request = RequestId(
                    id.parse()
                        .map_err(|_| ApiError::not_found(format!("unknown request `{}`", id)))?,
                );
                let body: ReviewBody = parse_body(req)?;
                let decision = match body.decision.as_str() {
                    "approve" => ReviewDecision::Approve {
                        nodes: match body.nodes {
                            None => None,
                            Some(list) => Some(
                                list.iter()
                                    .map(|n| NodeId::parse(n).map_err(|e| ApiError::invalid(e.to_string())))
                                    .collect::<Result<Vec<_>, _>>()?,
                            ),
                        },
                    },
                    "reject" => ReviewDecision::Reject {
                        reason: body.reason.unwrap_or_default(),
                    },
                    other => return Err(ApiError::invalid(format!("decision must be approve or reject, not `{}`", other))),
                };
                ok(self.commit(Mutation::RequestReviewed { request, decision })?)
            }
            (Get, ["blocks"]) => {
                let view = self.view();
                let list: Vec<_> = view
                    .cluster()
                    .blocks()
                    .blocks()
                    .filter(|b| who.is_admin() || b.owner == who.username)
                    .cloned()
                    .collect();
                ok(json!(list))
            }
            (Post, ["blocks", id, "activate"]) => {
                who.require_admin()?;
                let block = parse_block(id)?;
                ok(self.commit(Mutation::BlockActivated { block })?)
            }
            (Post, ["blocks", id, "deactivate"]) => {
                who.require_admin()?;
                let block = parse_block(id)?;
                ok(self.commit(Mutation::BlockDeactivated { block })?)
            }
            (Get, ["blocks", id]) => {
                let block = parse_block(id)?;
                let view = self.view();
                let status = view.cluster().block_status(block)?;
                who.require_owner_or_admin(&status.block.owner)?;
                ok(serde_json::to_value(status).unwrap())
            }
            (Get, ["blocks", id, "queue"]) => {
                let block = parse_block(id)?;
                let view = self.view();
                let status = view.cluster().block_status(block)?;
                who.require_owner_or_admin(&status.block.owner)?;
                let queue = status
                    .queue
                    .ok_or_else(|| ApiError::new(409, format!("block {} is {} and has no queue", block, status.block.state.as_str())))?;
                Ok(ApiResponse {
                    status: 200,
                    body: Body::Text(render(&queue.directives())),
                })
            }
            (Post, ["blocks", id, "environment"]) => {
                let block = parse_block(id)?;
                let owner = self.state.cluster().blocks().block(block).map_err(ClusterError::from)?.owner.clone();
                who.require_owner_or_admin(&owner)?;
                let body: EnvironmentBody = parse_body(req)?;
                ok(self.commit(Mutation::EnvironmentChosen {
                    block,
                    profile: body.profile,
                })?)
            }
            (Post, ["queues", q, "jobs"]) => {
                let body: JobBody = parse_body(req)?;
                let blocks = self.state.cluster().blocks();
                let profile = body.profile.unwrap_or_else(|| {
                    blocks
                        .block_by_queue(q)
                        .map(|b| b.environment_profile.clone())
                        .unwrap_or_else(|| blocks.policy().environment_profiles[0].clone())
                });
                let mut spec = JobSpec::new(&profile, body.nodes, body.cpu_seconds);
                spec.fail = body.fail;
                spec.payload = Payload {
                    name: body.payload_name.unwrap_or(spec.payload.name),
                    bytes: body.payload_bytes,
                };
                let mut doc = self.commit(Mutation::JobSubmitted {
                    user: who.username,
                    queue: q.to_string(),
                    spec,
                })?;
                let job: Job = serde_json::from_value(doc.clone()).expect("job document");
                doc = job_view(&job);
                created(doc)
            }
            (Get, ["jobs", id]) => {
                let job = parse_job(id)?;
                let view = self.view();
                let job = view.cluster().job(&job)?;
                who.require_owner_or_admin(&job.owner)?;
                ok(job_view(job))
            }
            (Post, ["jobs", id, "actions"]) => {
                let job = parse_job(id)?;
                let owner = self.state.cluster().job(&job)?.owner.clone();
                who.require_owner_or_admin(&owner)?;
                let body: ActionBody = parse_body(req)?;
                let action = JobAction::parse(&body.action)
                    .ok_or_else(|| ApiError::invalid(format!("unknown action `{}`", body.action)))?;
                let doc = self.commit(Mutation::JobActionApplied { job, action })?;
                let job: Job = serde_json::from_value(doc).expect("job document");
                ok(job_view(&job))
            }
            (Get, ["jobs", id, "logs"]) => {
                let job = parse_job(id)?;
                let view = self.view();
                let job = view.cluster().job(&job)?;
                who.require_owner_or_admin(&job.owner)?;
                ok(json!({ "job": job.id, "state": job.state, "epilogs": job.logs, "history": job.history }))
            }
            (Post, ["bench", "flood"]) => {
                who.require_admin()?;
                let body: serde_json::Map<String, Value> = parse_body(req)?;
                let mut config = FloodConfig::default();
                for (k, v) in &body {
                    let text = flood_value_text(v).ok_or_else(|| ApiError::invalid(format!("bad value for {}", k)))?;
                    config.set(k, &text).map_err(|e| ApiError::invalid(e.to_string()))?;
                }
                config.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
                created(self.commit(Mutation::FloodRunRecorded { config })?)
            }
            (Get, ["bench", "flood", run]) => {
                let record = self.flood_run(run)?;
                ok(serde_json::to_value(record).unwrap())
            }
            (Get, ["bench", "flood", run, "csv"]) => {
                let record = self.flood_run(run)?;
                Ok(ApiResponse {
                    status: 200,
                    body: Body::Text(flood::emit(&record.result, OutputFormat::Csv)),
                })
            }
            (Post, ["gateway", "commands"]) => {
                let body: GatewayBody = parse_body(req)?;
                let doc = self.commit(Mutation::GatewayCommand {
                    user: who.username,
                    block: BlockId(body.block),
                    raw: body.command,
                })?;
                let status = if doc.get("error").is_some() {
                    if doc["channel_down"] == json!(true) {
                        503
                    } else {
                        502
                    }
                } else {
                    let routed: Routed = serde_json::from_value(doc.clone()).expect("routed document");
                    if routed.command.verdict == openpc_core::router::Verdict::Allowed {
                        200
                    } else {
                        403
                    }
                };
                Ok(ApiResponse::json(status, doc))
            }
            (Get, ["gateway", "audit"]) => {
                who.require_admin()?;
                ok(json!(self.state.system.audit.records()))
            }
            _ => Err(ApiError::not_found(format!("no route for {} {}", req.method.as_str(), path))),
        }
    }

    fn flood_run(&self, raw: &str) -> Result<&crate::state::FloodRecord, ApiError> {
        raw.parse::<u64>()
            .ok()
            .and_then(|id| self.state.flood_runs.get(&id))
            .ok_or_else(|| ApiError::not_found(format!("unknown flood run `{}`", raw)))
    }

    fn register(&mut self, req: &ApiRequest) -> Result<Value, ApiError> {
        let body: RegisterBody = parse_body(req)?;
        if !openpc_core::ids::is_identifier(&body.username) {
            return Err(ApiError::invalid(format!("`{}` is not a valid username", body.username)));
        }
        if body.password.is_empty() {
            return Err(ApiError::invalid("password must not be empty"));
        }
        if self.state.users.contains_key(&body.username) {
            return Err(ApiError::new(409, format!("user `{}` already exists", body.username)));
        }
        let salt = new_salt();
        self.commit(Mutation::UserRegistered {
            display_name: body.display_name.unwrap_or_else(|| body.username.clone()),
            password_hash: hash_password(&salt, &body.password),
            username: body.username,
            role: Role::User,
            approved: false,
            salt,
        })
    }

    fn login(&mut self, req: &ApiRequest) -> Result<Value, ApiError> {
        let body: LoginBody = parse_body(req)?;
        let account = self
            .state
            .users
            .get(&body.username)
            .filter(|u| u.password_matches(&body.password))
            .ok_or_else(|| ApiError::new(401, "wrong username or password"))?;
        let token = new_token();
        let expires_at = self.clock.now() + self.config.session_ttl;
        let doc = json!({
            "token": token,
            "username": account.username,
            "role": account.role,
            "approved": account.approved,
            "expires_at": expires_at,
        });
        self.sessions.insert(
            token,
            Session {
                username: body.username,
                expires_at,
            },
        );
        Ok(doc)
    }
}

/// Whether `segs` fits a template like `/blocks/{id}/queue`.
pub fn template_matches(template: &str, segs: &[&str]) -> bool {
    let parts: Vec<&str> = template.trim_matches('/').split('/').collect();
    parts.len() == segs.len()
        && parts
            .iter()
            .zip(segs)
            .all(|(p, s)| (p.starts_with('{') && !s.is_empty()) || p == s)
}

fn new_token() -> String {
    hex::encode(rand::rng().random::<[u8; 32]>())
}

fn new_salt() -> String {
    hex::encode(rand::rng().random::<[u8; 16]>())
}
