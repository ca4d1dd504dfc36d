//! The folded service state and the single function that applies a mutation.

use std::collections::BTreeMap;

use openpc_core::block::{DeactivationCause, Period};
use openpc_core::cluster::{Cluster, ClusterError};
use openpc_core::flood::{self, FloodConfig, FloodError, FloodResult};
use openpc_core::ids::{NodeId, Timestamp};
use openpc_core::router::RouterError;
use openpc_core::system::System;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ServiceConfig;
use crate::event::{FaultKind, Mutation, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub display_name: String,
    pub registered_at: Timestamp,
    pub approved: bool,
    pub role: Role,
    pub salt: String,
    pub password_hash: String,
}

impl UserAccount {
    /// The account without its credentials.
    pub fn view(&self) -> Value {
        json!({
            "username": self.username,
            "display_name": self.display_name,
            "registered_at": self.registered_at,
            "approved": self.approved,
            "role": self.role,
        })
    }

    pub fn password_matches(&self, password: &str) -> bool {
        hash_password(&self.salt, password) == self.password_hash
    }
}

pub fn hash_password(salt: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(password.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodRecord {
    pub id: u64,
    pub created_at: Timestamp,
    pub config: FloodConfig,
    pub available_nodes: u64,
    pub result: FloodResult,
}

#[derive(Debug, thiserror::Error)]
pub enum ApplyError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Flood(#[from] FloodError),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("user `{0}` already exists")]
    UserExists(String),
    #[error("power controller refused: {0}")]
    PowerRefused(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppState {
    pub system: System,
    pub users: BTreeMap<String, UserAccount>,
    pub flood_runs: BTreeMap<u64, FloodRecord>,
}

impl AppState {
    /// Node pool from config, zero users.
    pub fn pristine(config: &ServiceConfig) -> AppState {
        let cluster = Cluster::new(config.cluster().expect("validated config"));
        AppState {
            system: System::new(cluster, &config.master_secret),
            users: BTreeMap::new(),
            flood_runs: BTreeMap::new(),
        }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.system.cluster
    }

    pub fn now(&self) -> Timestamp {
        self.system.cluster.now()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Moves the virtual clock forward, then applies `m`. On error the state
    /// may be partly changed, so callers apply to a copy.
    pub fn apply(&mut self, m: &Mutation, at: Timestamp) -> Result<Value, ApplyError> {
        self.system.cluster.advance_to(at);
        let cluster = &mut self.system.cluster;
        let doc = match m {
            Mutation::UserRegistered {
                username,
                display_name,
                role,
                approved,
                salt,
                password_hash,
            } => {
                if self.users.contains_key(username) {
                    return Err(ApplyError::UserExists(username.clone()));
                }
                cluster.register_user(username)?;
                if *approved {
                    cluster.approve_user(username)?;
                }
                let account = UserAccount {
                    username: username.clone(),
                    display_name: display_name.clone(),
                    registered_at: at,
                    approved: *approved,
                    role: *role,
                    salt: salt.clone(),
                    password_hash: password_hash.clone(),
                };
                let view = account.view();
                self.users.insert(username.clone(), account);
                view
            }
            Mutation::UserApproved { username } => {
                let account = self
                    .users
                    .get_mut(username)
                    .ok_or_else(|| ApplyError::UnknownUser(username.clone()))?;
                cluster.approve_user(username)?;
                account.approved = true;
                account.view()
            }
            Mutation::BlockRequested {
                user,
                nodes,
                start,
                end,
                description,
            } => {
                let period = Period::new(*start, *end).map_err(ClusterError::from)?;
                to_doc(&cluster.request_block(user, *nodes, period, description)?)
            }
            Mutation::RequestReviewed { request, decision } => to_doc(&cluster.review(*request, decision.clone())?),
            Mutation::BlockActivated { block } => {
                let report = cluster.activate(*block)?;
                json!({ "block": cluster.blocks().block(*block).map_err(ClusterError::from)?, "report": report })
            }
            Mutation::BlockDeactivated { block } => to_doc(&cluster.deactivate(*block, DeactivationCause::Admin)?),
            Mutation::EnvironmentChosen { block, profile } => to_doc(&cluster.choose_environment(*block, profile)?),
            Mutation::JobSubmitted { user, queue, spec } => {
                let id = cluster.submit_job(user, queue, spec.clone())?;
                to_doc(cluster.job(&id)?)
            }
            Mutation::JobActionApplied { job, action } => to_doc(&cluster.job_action(job, *action)?),
            Mutation::NodePowered { node, on } => {
                cluster.node_report(node)?;
                let line = format!("PWR {} {}", if *on { "ON" } else { "OFF" }, node.protocol_number());
                let reply = cluster.power_exec(&line);
                if reply.starts_with("ERR") {
                    return Err(ApplyError::PowerRefused(reply));
                }
                json!({ "node": node, "reply": reply, "status": cluster.node_report(node)? })
            }
            Mutation::NodeFaultInjected { node, fault } => {
                match fault {
                    FaultKind::Fault => cluster.inject_fault(node)?,
                    FaultKind::BootHang => cluster.inject_boot_failure(node, true)?,
                    FaultKind::BootOk => cluster.inject_boot_failure(node, false)?,
                }
                json!({ "node": node, "fault": fault, "status": cluster.node_report(node)? })
            }
            Mutation::GatewayCommand { user, block, raw } => match self.system.submit(user, *block, raw) {
                Ok(routed) => to_doc(&routed),
                // These are audited before failing, so the attempt is kept.
                Err(e @ (RouterError::HardwareFault(_) | RouterError::ChannelDown)) => json!({
                    "error": e.to_string(),
                    "channel_down": e == RouterError::ChannelDown,
                    "audit_seq": self.system.audit.records().last().map(|r| r.seq),
                }),
                Err(e) => return Err(e.into()),
            },
            Mutation::FloodRunRecorded { config } => {
                let available = flood::available_nodes(cluster.fabric());
                let run = flood::run(config, available)?;
                let id = self.flood_runs.keys().next_back().map_or(1, |k| k + 1);
                let record = FloodRecord {
                    id,
                    created_at: at,
                    config: config.clone(),
                    available_nodes: available,
                    result: run.result,
                };
                let doc = to_doc(&record);
                self.flood_runs.insert(id, record);
                doc
            }
        };
        Ok(doc)
    }

    /// Owner of the block currently holding `node`, if that block is active.
    pub fn active_owner_of(&self, node: &NodeId) -> Option<&str> {
        self.cluster()
            .blocks()
            .blocks()
            .find(|b| b.state == openpc_core::block::BlockState::Active && b.nodes.contains(node))
            .map(|b| b.owner.as_str())
    }
}

fn to_doc<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("domain types serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn register(name: &str, role: Role, approved: bool) -> Mutation {
        Mutation::UserRegistered {
            username: name.into(),
            display_name: name.into(),
            role,
            approved,
            salt: "s".into(),
            password_hash: hash_password("s", "pw"),
        }
    }

    #[test]
    fn pristine_has_pool_and_no_users() {
        let s = AppState::pristine(&ServiceConfig::default());
        assert!(s.users.is_empty());
        assert_eq!(s.cluster().fabric().len(), 16);
    }

    #[test]
    fn password_check() {
        let mut s = AppState::pristine(&ServiceConfig::default());
        s.apply(&register("user01", Role::User, false), Timestamp(5)).unwrap();
        let u = &s.users["user01"];
        assert!(u.password_matches("pw"));
        assert!(!u.password_matches("pw "));
        assert_eq!(u.registered_at, Timestamp(5));
        assert!(!s.cluster().blocks().is_approved("user01"));
    }

    #[test]
    fn duplicate_user_is_refused() {
        let mut s = AppState::pristine(&ServiceConfig::default());
        s.apply(&register("user01", Role::User, true), Timestamp(0)).unwrap();
        assert!(matches!(
            s.apply(&register("user01", Role::User, true), Timestamp(0)),
            Err(ApplyError::UserExists(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let cfg = ServiceConfig::default();
        let mut a = AppState::pristine(&cfg);
        let b = AppState::pristine(&cfg);
        assert_eq!(a.hash(), b.hash());
        a.apply(&register("user01", Role::User, true), Timestamp(0)).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn power_of_unknown_node_fails() {
        let mut s = AppState::pristine(&ServiceConfig::default());
        let r = s.apply(
            &Mutation::NodePowered {
                node: NodeId::numbered(40),
                on: true,
            },
            Timestamp(0),
        );
        assert!(matches!(r, Err(ApplyError::Cluster(ClusterError::Fabric(_)))));
    }
}
