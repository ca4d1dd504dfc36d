//! Gateway, master node and cluster wired together.
//!
//! Allowed PBS and OS commands cross an authenticated, ordered channel as
//! text frames and are executed by [`MasterNode`]; COMPORT commands go
//! straight to the power controller. Nothing is retried.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, ClusterError};
use crate::fabric::Payload;
use crate::ids::{BlockId, JobId};
use crate::qmgr::CpuTime;
use crate::router::{
    authorize, comport_line, normalize_path, workspace_root, AuditLog, Command, CommandKind, CommandRegistry,
    ForwardTarget, Frame, Response, RouterError, Verdict,
};
use crate::scheduler::{JobAction, JobSpec};

/// Gateway end of the link to the master node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterChannel {
    up: bool,
    sent: u64,
    transcript: Vec<String>,
}

impl MasterChannel {
    /// Handshake: the gateway must present the master's shared secret.
    pub fn open(secret: &str, master: &MasterNode) -> Result<MasterChannel, RouterError> {
        if secret != master.secret {
            return Err(RouterError::AuthFailed);
        }
        Ok(MasterChannel {
            up: true,
            sent: 0,
            transcript: Vec::new(),
        })
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    pub fn set_up(&mut self, up: bool) {
        self.up = up;
    }

    /// Every frame that reached the master, in order.
    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    fn deliver(&mut self, frame: &Frame) -> Result<String, RouterError> {
        if !self.up {
            return Err(RouterError::ChannelDown);
        }
        let text = frame.encode();
        self.transcript.push(text.clone());
        self.sent += 1;
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum Entry {
    Dir,
    File(Vec<u8>),
}

/// Per-user file tree plus the command handlers of the master node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterNode {
    secret: String,
    files: BTreeMap<String, Entry>,
    executed: u64,
}

impl MasterNode {
    pub fn new(secret: &str) -> MasterNode {
        MasterNode {
            secret: secret.to_string(),
            files: BTreeMap::new(),
            executed: 0,
        }
    }

    fn ensure_home(&mut self, user: &str) -> String {
        let root = workspace_root(user);
        self.files.entry(root.clone()).or_insert(Entry::Dir);
        root
    }

    pub fn read_file(&self, user: &str, path: &str) -> Option<&[u8]> {
        let p = normalize_path(&workspace_root(user), path)?;
        match self.files.get(&p) {
            Some(Entry::File(b)) => Some(b),
            _ => None,
        }
    }

    fn execute(&mut self, text: &str, cluster: &mut Cluster) -> String {
        self.executed += 1;
        let resp = match Frame::decode(text) {
            Err(e) => Response::err(e.to_string()),
            Ok(frame) => match frame.kind {
                CommandKind::Pbs => self.pbs(&frame, cluster),
                CommandKind::Os => self.os(&frame),
                _ => Response::err("not a master command"),
            },
        };
        resp.encode()
    }

    fn pbs(&mut self, frame: &Frame, cluster: &mut Cluster) -> Response {
        let queue = frame.block.queue_name();
        let words: Vec<&str> = frame.raw.split_whitespace().collect();
        let resolve = |s: &str| -> Result<JobId, String> {
            if s.bytes().all(|b| b.is_ascii_digit()) && !s.is_empty() {
                Ok(JobId::new(&queue, s.parse().map_err(|_| format!("bad job id {}", s))?))
            } else {
                s.parse::<JobId>().map_err(|_| format!("bad job id {}", s))
            }
        };
        let err = |e: ClusterError| Response::err(e.to_string());
        let control = |cluster: &mut Cluster, id: &str, action| match resolve(id) {
            Err(e) => Response::err(e),
            Ok(id) => match cluster.job_action(&id, action) {
                Ok(j) => Response::ok(format!("{} {}", j.id, j.state)),
                Err(e) => err(e),
            },
        };
        match words[..] {
            ["qsub", ref args @ ..] => self.qsub(frame, args, cluster),
            ["qstat"] => Response::ok(qstat_lines(cluster, &queue, None)),
            ["qstat", q] if q == queue => Response::ok(qstat_lines(cluster, &queue, None)),
            ["qstat", id] => match resolve(id) {
                Ok(id) if cluster.job(&id).is_ok() => Response::ok(qstat_lines(cluster, &queue, Some(&id))),
                Ok(id) => Response::err(format!("unknown job {}", id)),
                Err(e) => Response::err(e),
            },
            ["qdel", id] => control(cluster, id, JobAction::Delete),
            ["qhold", id] => control(cluster, id, JobAction::Suspend),
            ["qrls", id] => control(cluster, id, JobAction::Resume),
            ["qsig", "-s", sig, id] => match sig {
                "STOP" | "SIGSTOP" => control(cluster, id, JobAction::Suspend),
                "CONT" | "SIGCONT" => control(cluster, id, JobAction::Resume),
                "TERM" | "SIGTERM" | "KILL" | "SIGKILL" => control(cluster, id, JobAction::Stop),
                _ => Response::err(format!("unsupported signal {}", sig)),
            },
            _ => Response::err(format!("usage error: {}", frame.raw)),
        }
    }

    fn qsub(&mut self, frame: &Frame, args: &[&str], cluster: &mut Cluster) -> Response {
        let queue = frame.block.queue_name();
        let profile = match cluster.blocks().block(frame.block) {
            Ok(b) => b.environment_profile.clone(),
            Err(e) => return Response::err(e.to_string()),
        };
        let mut spec = JobSpec::new(&profile, 1, 60);
        let mut target = queue.clone();
        let mut i = 0;
        let mut script = None;
        while i < args.len() {
            let value = args.get(i + 1).copied();
            match (args[i], value) {
                ("-q", Some(v)) => target = v.to_string(),
                ("-l", Some(v)) => {
                    for res in v.split(',') {
                        match res.split_once('=') {
                            Some(("nodes", n)) => match n.parse() {
                                Ok(n) => spec.nodes_requested = n,
                                Err(_) => return Response::err(format!("bad node count {}", n)),
                            },
                            Some(("cput", t)) => match CpuTime::parse(t) {
                                Some(t) => spec.cpu_seconds_estimate = t.0,
                                None => return Response::err(format!("bad cput {}", t)),
                            },
                            _ => return Response::err(format!("unsupported resource {}", res)),
                        }
                    }
                }
                ("-v", Some(v)) => {
                    for var in v.split(',') {
                        match var.split_once('=') {
                            Some(("env", p)) => spec.environment_profile = p.to_string(),
                            _ => return Response::err(format!("unsupported variable {}", var)),
                        }
                    }
                }
                (s, _) if !s.starts_with('-') => {
                    script = Some(s);
                    i += 1;
                    continue;
                }
                (s, _) => return Response::err(format!("unsupported option {}", s)),
            }
            i += 2;
        }
        if let Some(name) = script {
            let bytes = self.read_file(&frame.user, name).map(|b| b.len() as u64).unwrap_or(0);
            spec.payload = Payload {
                name: name.to_string(),
                bytes,
            };
        }
        match cluster.submit_job(&frame.user, &target, spec) {
            Ok(id) => Response::ok(id.to_string()),
            Err(e) => Response::err(e.to_string()),
        }
    }

    fn os(&mut self, frame: &Frame) -> Response {
        let root = self.ensure_home(&frame.user);
        let words: Vec<&str> = frame.raw.split_whitespace().filter(|w| !w.starts_with('-')).collect();
        let Some((&verb, operands)) = words.split_first() else {
            return Response::err("empty command");
        };
        let mut paths = Vec::new();
        for (i, p) in operands.iter().enumerate() {
            if verb == "upload" && i == 1 {
                break;
            }
            match normalize_path(&root, p) {
                Some(n) if crate::router::within_root(&root, &n) => paths.push(n),
                _ => return Response::err(format!("{}: outside workspace", p)),
            }
        }
        let parent_is_dir = |files: &BTreeMap<String, Entry>, p: &str| {
            let parent = p.rsplit_once('/').map(|(a, _)| a).unwrap_or("");
            matches!(files.get(parent), Some(Entry::Dir))
        };
        match (verb, &paths[..], operands) {
            ("ls", [], _) | ("ls", [_], _) => {
                let dir = paths.first().cloned().unwrap_or(root.clone());
                match self.files.get(&dir) {
                    Some(Entry::Dir) => {
                        let prefix = format!("{}/", dir);
                        let names: Vec<&str> = self
                            .files
                            .keys()
                            .filter_map(|k| k.strip_prefix(&prefix))
                            .filter(|rest| !rest.contains('/'))
                            .collect();
                        Response::ok(names.join("\n"))
                    }
                    Some(Entry::File(_)) => Response::ok(dir.rsplit('/').next().unwrap_or("").to_string()),
                    None => Response::err(format!("{}: no such file or directory", dir)),
                }
            }
            ("cat", [p], _) => match self.files.get(p) {
                Some(Entry::File(b)) => Response::ok(String::from_utf8_lossy(b).into_owned()),
                Some(Entry::Dir) => Response::err(format!("{}: is a directory", p)),
                None => Response::err(format!("{}: no such file or directory", p)),
            },
            ("download", [p], _) => match self.files.get(p) {
                Some(Entry::File(b)) => Response::ok(B64.encode(b)),
                _ => Response::err(format!("{}: no such file", p)),
            },
            ("upload", [p], [_, data]) => match B64.decode(data) {
                Err(_) => Response::err("upload data is not base64"),
                Ok(_) if !parent_is_dir(&self.files, p) => Response::err(format!("{}: no parent directory", p)),
                Ok(_) if matches!(self.files.get(p), Some(Entry::Dir)) => {
                    Response::err(format!("{}: is a directory", p))
                }
                Ok(bytes) => {
                    let n = bytes.len();
                    self.files.insert(p.clone(), Entry::File(bytes));
                    Response::ok(format!("{} bytes", n))
                }
            },
            ("mkdir", [p], _) => {
                if self.files.contains_key(p) {
                    Response::err(format!("{}: exists", p))
                } else if !parent_is_dir(&self.files, p) {
                    Response::err(format!("{}: no parent directory", p))
                } else {
                    self.files.insert(p.clone(), Entry::Dir);
                    Response::ok("")
                }
            }
            ("rm", [p], _) => {
                if *p == root {
                    return Response::err("refusing to remove workspace root");
                }
                if self.files.remove(p).is_none() {
                    return Response::err(format!("{}: no such file or directory", p));
                }
                let prefix = format!("{}/", p);
                self.files.retain(|k, _| !k.starts_with(&prefix));
                Response::ok("")
            }
            ("cp", [a, b], _) | ("mv", [a, b], _) => match self.files.get(a).cloned() {
                Some(Entry::File(bytes)) => {
                    let dest = match self.files.get(b) {
                        Some(Entry::Dir) => format!("{}/{}", b, a.rsplit('/').next().unwrap_or("")),
                        _ => b.clone(),
                    };
                    if !parent_is_dir(&self.files, &dest) {
                        return Response::err(format!("{}: no parent directory", b));
                    }
                    if verb == "mv" {
                        self.files.remove(a);
                    }
                    self.files.insert(dest, Entry::File(bytes));
                    Response::ok("")
                }
                Some(Entry::Dir) => Response::err(format!("{}: is a directory", a)),
                None => Response::err(format!("{}: no such file", a)),
            },
            _ => Response::err(format!("usage error: {}", frame.raw)),
        }
    }
}

fn qstat_lines(cluster: &Cluster, queue: &str, only: Option<&JobId>) -> String {
    let mut lines = Vec::new();
    for j in cluster.scheduler().jobs_in_queue(queue) {
        if only.is_some_and(|id| *id != j.id) {
            continue;
        }
        lines.push(format!("{} {} {} {}", j.id, j.state, j.owner, j.queue));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routed {
    pub command: Command,
    pub audit_seq: u64,
    pub forwarded_to: ForwardTarget,
    pub response: Option<Response>,
}

/// The full control plane as seen from the gateway.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct System {
    pub cluster: Cluster,
    pub registry: CommandRegistry,
    pub master: MasterNode,
    pub channel: MasterChannel,
    pub audit: AuditLog,
}

impl System {
    pub fn new(cluster: Cluster, secret: &str) -> System {
        let master = MasterNode::new(secret);
        let channel = MasterChannel::open(secret, &master).expect("same secret");
        System {
            cluster,
            registry: CommandRegistry::default(),
            master,
            channel,
            audit: AuditLog::default(),
        }
    }

    /// Classifies and authorizes a raw command for `user`'s session on
    /// `block`, then routes it if allowed. Every outcome is audited.
    pub fn submit(&mut self, user: &str, block: BlockId, raw: &str) -> Result<Routed, RouterError> {
        let mut cmd = Command::new(raw, user, block, &self.registry)?;
        cmd.verdict = authorize(&cmd, self.cluster.blocks().block(block).ok());
        if cmd.verdict != Verdict::Allowed {
            let seq = self.audit.append(self.cluster.now(), &cmd, ForwardTarget::None, false);
            return Ok(Routed {
                command: cmd,
                audit_seq: seq,
                forwarded_to: ForwardTarget::None,
                response: None,
            });
        }
        self.route(cmd)
    }

    /// Forwards an allowed command. Errors other than the precondition
    /// violation are audited before being returned.
    pub fn route(&mut self, cmd: Command) -> Result<Routed, RouterError> {
        if cmd.verdict != Verdict::Allowed {
            return Err(RouterError::NotAllowed(cmd.verdict));
        }
        let now = self.cluster.now();
        match cmd.kind {
            CommandKind::Pbs | CommandKind::Os => {
                let frame = Frame {
                    kind: cmd.kind,
                    user: cmd.session_user.clone(),
                    block: cmd.target_block,
                    raw: cmd.raw.clone(),
                };
                let text = match self.channel.deliver(&frame) {
                    Ok(t) => t,
                    Err(e) => {
                        self.audit.append(now, &cmd, ForwardTarget::Master, false);
                        return Err(e);
                    }
                };
                let seq = self.audit.append(now, &cmd, ForwardTarget::Master, true);
                let reply = self.master.execute(&text, &mut self.cluster);
                let response = Response::decode(&reply)?;
                Ok(Routed {
                    command: cmd,
                    audit_seq: seq,
                    forwarded_to: ForwardTarget::Master,
                    response: Some(response),
                })
            }
            CommandKind::Comport => {
                let Some(line) = comport_line(&cmd.raw) else {
                    let seq = self.audit.append(now, &cmd, ForwardTarget::None, false);
                    return Ok(Routed {
                        command: cmd,
                        audit_seq: seq,
                        forwarded_to: ForwardTarget::None,
                        response: Some(Response::err("ERR 00 BADCMD")),
                    });
                };
                let seq = self.audit.append(now, &cmd, ForwardTarget::Hardware, true);
                let reply = self.cluster.power_exec(&line);
                if reply.starts_with("ERR") {
                    return Err(RouterError::HardwareFault(reply));
                }
                Ok(Routed {
                    command: cmd,
                    audit_seq: seq,
                    forwarded_to: ForwardTarget::Hardware,
                    response: Some(Response::ok(reply)),
                })
            }
            CommandKind::Unclassified => Err(RouterError::NotAllowed(cmd.verdict)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Period, ReviewDecision, ReviewOutcome};
    use crate::cluster::ClusterConfig;
    use crate::ids::Timestamp;
    use crate::router::DiscardReason;
    use crate::scheduler::JobState;

    fn system() -> (System, BlockId, BlockId) {
        let mut c = Cluster::new(ClusterConfig {
            pool_size: 8,
            ..ClusterConfig::default()
        });
        let mut ids = Vec::new();
        for u in ["user01", "user02"] {
            c.register_user(u).unwrap();
            c.approve_user(u).unwrap();
            let r = c
                .request_block(u, 4, Period::new(Timestamp(0), Timestamp(86_400)).unwrap(), "")
                .unwrap();
            let ReviewOutcome::Approved(b) = c.review(r.id, ReviewDecision::Approve { nodes: None }).unwrap() else {
                panic!()
            };
            c.activate(b.id).unwrap();
            ids.push(b.id);
        }
        (System::new(c, "s3cret"), ids[0], ids[1])
    }

    fn ok(r: Result<Routed, RouterError>) -> String {
        let r = r.unwrap();
        let resp = r.response.expect("forwarded");
        assert!(resp.ok, "{}", resp.payload);
        resp.payload
    }

    #[test]
    fn handshake_needs_secret() {
        let m = MasterNode::new("a");
        assert!(matches!(MasterChannel::open("b", &m), Err(RouterError::AuthFailed)));
        assert!(MasterChannel::open("a", &m).is_ok());
    }

    #[test]
    fn qsub_through_master() {
        let (mut s, b1, _) = system();
        let out = ok(s.submit("user01", b1, "qsub -q block01 -l nodes=2 -l cput=00:00:30 run.sh"));
        assert_eq!(out, "block01.1");
        let job = s.cluster.job(&"block01.1".parse().unwrap()).unwrap();
        assert_eq!(job.state, JobState::Running);
        assert_eq!(job.spec.nodes_requested, 2);
        assert_eq!(job.spec.cpu_seconds_estimate, 30);
        assert_eq!(s.channel.transcript().len(), 1);
        assert_eq!(ok(s.submit("user01", b1, "qstat")), "block01.1 RUNNING user01 block01");
        assert_eq!(ok(s.submit("user01", b1, "qhold 1")), "block01.1 SUSPENDED");
        assert_eq!(ok(s.submit("user01", b1, "qrls block01.1")), "block01.1 RUNNING");
        assert_eq!(ok(s.submit("user01", b1, "qsig -s TERM 1")), "block01.1 STOPPED");
        let r = s.submit("user01", b1, "qdel 1").unwrap();
        assert!(!r.response.unwrap().ok);
    }

    #[test]
    fn cross_block_commands_are_discarded() {
        let (mut s, b1, b2) = system();
        for (user, block, raw, reason) in [
            ("user02", b1, "qsub -q block01 run.sh", DiscardReason::NotOwner),
            ("user01", b1, "qsub -q block02 run.sh", DiscardReason::QueueOutsideBlock("block02".into())),
            ("user01", b1, "power off node05", DiscardReason::NodeOutsideBlock("node05".into())),
            ("user01", b2, "qstat", DiscardReason::NotOwner),
            ("user01", b1, "bash -c id", DiscardReason::Unclassified),
        ] {
            let r = s.submit(user, block, raw).unwrap();
            assert_eq!(r.command.verdict, Verdict::Discarded { reason });
            assert_eq!(r.forwarded_to, ForwardTarget::None);
        }
        assert!(s.channel.transcript().is_empty());
        assert_eq!(s.audit.len(), 5);
    }

    #[test]
    fn comport_passthrough() {
        let (mut s, b1, _) = system();
        assert_eq!(ok(s.submit("user01", b1, "status node03")), "STA 03 UP");
        assert_eq!(ok(s.submit("user01", b1, "power off node03")), "ACK 03 OFF");
        assert!(s.channel.transcript().is_empty());
        let r = s.submit("user01", b1, "power on").unwrap();
        assert_eq!(r.response.unwrap().payload, "ERR 00 BADCMD");
    }

    #[test]
    fn channel_down_is_not_retried() {
        let (mut s, b1, _) = system();
        s.channel.set_up(false);
        assert_eq!(s.submit("user01", b1, "qstat").unwrap_err(), RouterError::ChannelDown);
        assert!(s.channel.transcript().is_empty());
        let rec = s.audit.records().last().unwrap();
        assert!(!rec.delivered);
        s.channel.set_up(true);
        ok(s.submit("user01", b1, "qstat"));
        assert_eq!(s.channel.transcript().len(), 1);
    }

    #[test]
    fn routing_a_discarded_command_fails() {
        let (mut s, b1, _) = system();
        let r = s.submit("user02", b1, "qstat").unwrap();
        let before = s.audit.len();
        assert!(matches!(s.route(r.command), Err(RouterError::NotAllowed(_))));
        assert_eq!(s.audit.len(), before);
        assert!(s.channel.transcript().is_empty());
    }

    #[test]
    fn workspace_commands() {
        let (mut s, b1, _) = system();
        let data = B64.encode(b"#!/bin/sh\nmpirun ./a.out\n");
        ok(s.submit("user01", b1, "mkdir jobs"));
        assert_eq!(ok(s.submit("user01", b1, &format!("upload jobs/run.sh {}", data))), "25 bytes");
        assert_eq!(ok(s.submit("user01", b1, "ls")), "jobs");
        ok(s.submit("user01", b1, "cp jobs/run.sh copy.sh"));
        ok(s.submit("user01", b1, "mv copy.sh jobs/second.sh"));
        assert_eq!(ok(s.submit("user01", b1, "ls jobs")), "run.sh\nsecond.sh");
        assert_eq!(ok(s.submit("user01", b1, "cat jobs/second.sh")), "#!/bin/sh\nmpirun ./a.out\n");
        assert_eq!(ok(s.submit("user01", b1, "download jobs/run.sh")), data);
        ok(s.submit("user01", b1, "rm -r jobs"));
        assert_eq!(ok(s.submit("user01", b1, "ls")), "");
        assert!(!s.submit("user01", b1, "cat nothing").unwrap().response.unwrap().ok);

        ok(s.submit("user01", b1, &format!("upload run.sh {}", data)));
        assert_eq!(ok(s.submit("user01", b1, "qsub run.sh")), "block01.1");
        let job = s.cluster.job(&"block01.1".parse().unwrap()).unwrap();
        assert_eq!(job.spec.payload.bytes, 25);
    }
}
