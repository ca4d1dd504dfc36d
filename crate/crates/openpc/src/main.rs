use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openpc::config::ServiceConfig;
use openpc::{ApiService, FileStore, WallClock};
use openpc_core::fabric::NodeFabric;
use openpc_core::flood::{self, FloodConfig, OutputFormat};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "openpc", version, about = "Public cluster gateway and its client")]
struct Cli {
    /// Base URL of a running gateway.
    #[arg(long, env = "OPENPC_SERVER", default_value = "http://127.0.0.1:8080", global = true)]
    server: String,
    /// Session token from `openpc user login`.
    #[arg(long, env = "OPENPC_TOKEN", global = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the gateway (reads OPENPC_CONFIG, OPENPC_DATA_DIR, OPENPC_LISTEN_ADDR).
    Serve,
    #[command(subcommand)]
    User(UserCmd),
    #[command(subcommand)]
    Block(BlockCmd),
    #[command(subcommand)]
    Job(JobCmd),
    #[command(subcommand)]
    Node(NodeCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Send a raw command through the gateway router.
    Command {
        block: u32,
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        raw: Vec<String>,
    },
}

#[derive(Subcommand)]
enum UserCmd {
    Register {
        username: String,
        #[arg(long)]
        password: String,
        #[arg(long)]
        display_name: Option<String>,
    },
    /// Prints a session token.
    Login {
        username: String,
        #[arg(long)]
        password: String,
    },
    Approve {
        username: String,
    },
    List,
}

#[derive(Subcommand)]
enum BlockCmd {
    Request {
        #[arg(long)]
        nodes: u32,
        /// End of the usage period, seconds since the epoch.
        #[arg(long)]
        end: u64,
        #[arg(long)]
        start: Option<u64>,
        #[arg(long, default_value = "")]
        description: String,
    },
    Requests {
        #[arg(long)]
        state: Option<String>,
    },
    Review {
        request: u32,
        #[arg(value_parser = ["approve", "reject"])]
        decision: String,
        /// Comma-separated node list to assign instead of the first free ones.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<String>>,
        #[arg(long)]
        reason: Option<String>,
    },
    List,
    Show {
        block: u32,
    },
    /// Print the block's queue as a Qmgr script.
    Queue {
        block: u32,
    },
    Activate {
        block: u32,
    },
    Deactivate {
        block: u32,
    },
    Env {
        block: u32,
        profile: String,
    },
}

#[derive(Subcommand)]
enum JobCmd {
    Submit {
        queue: String,
        #[arg(long)]
        cpu_seconds: u64,
        #[arg(long, default_value_t = 1)]
        nodes: u32,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        payload_name: Option<String>,
        #[arg(long, default_value_t = 0)]
        payload_bytes: u64,
    },
    Show {
        job: String,
    },
    Action {
        job: String,
        #[arg(value_parser = ["suspend", "resume", "stop", "delete", "reexecute"])]
        action: String,
    },
    Logs {
        job: String,
    },
}

#[derive(Subcommand)]
enum NodeCmd {
    List,
    Status {
        node: String,
    },
    Power {
        node: String,
        #[arg(value_parser = ["on", "off"])]
        action: String,
    },
    Fault {
        node: String,
        #[arg(value_parser = ["fault", "boot_hang", "boot_ok"])]
        kind: String,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    Flood(FloodArgs),
    Show { run: u64 },
    Csv { run: u64 },
}

#[derive(Args)]
struct FloodArgs {
    /// Flat key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value settings, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run in this process instead of on the gateway.
    #[arg(long)]
    local: bool,
    #[arg(long, default_value = "csv", value_parser = ["csv", "table"])]
    format: String,
}

struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    fn new(base: &str, token: Option<String>) -> Client {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Client {
            base: base.trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    fn get(&self, path: &str) -> Result<(u16, String), String> {
        let mut req = self.agent.get(format!("{}{}", self.base, path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {}", t));
        }
        let mut resp = req.call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    fn post(&self, path: &str, body: Value) -> Result<(u16, String), String> {
        let mut req = self.agent.post(format!("{}{}", self.base, path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {}", t));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

fn print_reply((status, text): (u16, String)) -> ExitCode {
    let pretty = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| serde_json::to_string_pretty(&v).ok())
        .unwrap_or(text);
    if status >= 400 {
        eprintln!("HTTP {}", status);
        eprintln!("{}", pretty);
        ExitCode::FAILURE
    } else {
        println!("{}", pretty.trim_end());
        ExitCode::SUCCESS
    }
}

fn flood_settings(args: &FloodArgs) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))?;
        // Validate the file as a whole before splitting it up.
        FloodConfig::from_kv(&text).map_err(|e| e.to_string())?;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{}`", s))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn run_flood(client: &Client, args: &FloodArgs) -> Result<ExitCode, String> {
    let pairs = flood_settings(args)?;
    let format = if args.format == "table" { OutputFormat::Table } else { OutputFormat::Csv };
    if args.local {
        let mut config = FloodConfig::default();
        for (k, v) in &pairs {
            config.set(k, v).map_err(|e| e.to_string())?;
        }
        let service = ServiceConfig::from_env().map_err(|e| e.to_string())?;
        let cluster = service.cluster().map_err(|e| e.to_string())?;
        let fabric = NodeFabric::with_pool(cluster.pool_size, cluster.fabric);
        let run = flood::run(&config, flood::available_nodes(&fabric)).map_err(|e| e.to_string())?;
        print!("{}", flood::emit(&run.result, format));
        return Ok(ExitCode::SUCCESS);
    }
    let body: Map<String, Value> = pairs.into_iter().map(|(k, v)| (k, Value::String(v))).collect();
    let (status, text) = client.post("/bench/flood", Value::Object(body))?;
    if status >= 400 {
        return Ok(print_reply((status, text)));
    }
    let run: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let id = run["id"].as_u64().ok_or("reply has no run id")?;
    match format {
        OutputFormat::Csv => {
            let (status, csv) = client.get(&format!("/bench/flood/{}/csv", id))?;
            if status >= 400 {
                return Ok(print_reply((status, csv)));
            }
            eprintln!("flood run {}", id);
            print!("{}", csv);
        }
        OutputFormat::Table => {
            let result = serde_json::from_value(run["result"].clone()).map_err(|e| e.to_string())?;
            eprintln!("flood run {}", id);
            print!("{}", flood::emit(&result, OutputFormat::Table));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve() -> Result<ExitCode, String> {
    let config = ServiceConfig::from_env().map_err(|e| e.to_string())?;
    let store = FileStore::open(&config.data_dir).map_err(|e| e.to_string())?;
    let addr = config.listen_addr.clone();
    let service = ApiService::open(config, Box::new(store), Box::new(WallClock)).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime
        .block_on(openpc::http::serve(service, &addr))
        .map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let c = Client::new(&cli.server, cli.token);
    let reply = match cli.command {
        Cmd::Serve => return serve(),
        Cmd::User(cmd) => match cmd {
            UserCmd::Register {
                username,
                password,
                display_name,
            } => c.post(
                "/users",
                json!({ "username": username, "password": password, "display_name": display_name }),
            )?,
            UserCmd::Login { username, password } => {
                let (status, text) = c.post("/sessions", json!({ "username": username, "password": password }))?;
                if status >= 400 {
                    return Ok(print_reply((status, text)));
                }
                let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
                println!("{}", v["token"].as_str().unwrap_or_default());
                return Ok(ExitCode::SUCCESS);
            }
            UserCmd::Approve { username } => c.post(&format!("/users/{}/approve", username), json!({}))?,
            UserCmd::List => c.get("/users")?,
        },
        Cmd::Block(cmd) => match cmd {
            BlockCmd::Request {
                nodes,
                end,
                start,
                description,
            } => c.post(
                "/blocks/requests",
                json!({ "nodes": nodes, "start": start, "end": end, "description": description }),
            )?,
            BlockCmd::Requests { state } => match state {
                Some(s) => c.get(&format!("/blocks/requests?state={}", s))?,
                None => c.get("/blocks/requests")?,
            },
            BlockCmd::Review {
                request,
                decision,
                nodes,
                reason,
            } => c.post(
                &format!("/blocks/requests/{}/review", request),
                json!({ "decision": decision, "nodes": nodes, "reason": reason }),
            )?,
            BlockCmd::List => c.get("/blocks")?,
            BlockCmd::Show { block } => c.get(&format!("/blocks/{}", block))?,
            BlockCmd::Queue { block } => c.get(&format!("/blocks/{}/queue", block))?,
            BlockCmd::Activate { block } => c.post(&format!("/blocks/{}/activate", block), json!({}))?,
            BlockCmd::Deactivate { block } => c.post(&format!("/blocks/{}/deactivate", block), json!({}))?,
            BlockCmd::Env { block, profile } => {
                c.post(&format!("/blocks/{}/environment", block), json!({ "profile": profile }))?
            }
        },
        Cmd::Job(cmd) => match cmd {
            JobCmd::Submit {
                queue,
                cpu_seconds,
                nodes,
                profile,
                payload_name,
                payload_bytes,
            } => c.post(
                &format!("/queues/{}/jobs", queue),
                json!({
                    "cpu_seconds": cpu_seconds,
                    "nodes": nodes,
                    "profile": profile,
                    "payload_name": payload_name,
                    "payload_bytes": payload_bytes,
                }),
            )?,
            JobCmd::Show { job } => c.get(&format!("/jobs/{}", job))?,
            JobCmd::Action { job, action } => c.post(&format!("/jobs/{}/actions", job), json!({ "action": action }))?,
            JobCmd::Logs { job } => c.get(&format!("/jobs/{}/logs", job))?,
        },
        Cmd::Node(cmd) => match cmd {
            NodeCmd::List => c.get("/nodes")?,
            NodeCmd::Status { node } => c.get(&format!("/nodes/{}/status", node))?,
            NodeCmd::Power { node, action } => c.post(&format!("/nodes/{}/power", node), json!({ "action": action }))?,
            NodeCmd::Fault { node, kind } => c.post(&format!("/nodes/{}/faults", node), json!({ "kind": kind }))?,
        },
        Cmd::Bench(cmd) => match cmd {
            BenchCmd::Flood(args) => return run_flood(&c, &args),
            BenchCmd::Show { run } => c.get(&format!("/bench/flood/{}", run))?,
            BenchCmd::Csv { run } => c.get(&format!("/bench/flood/{}/csv", run))?,
        },
        Cmd::Command { block, raw } => c.post(
            "/gateway/commands",
            json!({ "block": block, "command": raw.join(" ") }),
        )?,
    };
    Ok(print_reply(reply))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("openpc: {}", e);
            ExitCode::FAILURE
        }
    }
}
