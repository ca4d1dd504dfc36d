#![allow(dead_code)]

use std::collections::HashMap;

use openpc::config::ServiceConfig;
use openpc::{recover, ApiRequest, ApiResponse, ApiService, ManualClock, MemoryStore};
use serde_json::{json, Value};

pub const START: u64 = 1_000_000;
pub const DAY: u64 = 86_400;

/// A service on a memory store and a hand-driven clock, plus the tokens of
/// every user logged in through it.
pub struct Harness {
    pub svc: ApiService,
    pub store: MemoryStore,
    pub clock: ManualClock,
    pub config: ServiceConfig,
    tokens: HashMap<String, String>,
}

impl Harness {
    pub fn new(config: ServiceConfig) -> Harness {
        let store = MemoryStore::default();
        let clock = ManualClock::new(START);
        let svc = ApiService::open(config.clone(), Box::new(store.clone()), Box::new(clock.clone()))
            .expect("fresh service");
        let mut h = Harness {
            svc,
            store,
            clock,
            config,
            tokens: HashMap::new(),
        };
        let admin = h.config.admin.clone();
        h.login(&admin.username, &admin.password);
        h
    }

    pub fn admin(&self) -> String {
        self.token(&self.config.admin.username.clone())
    }

    pub fn token(&self, user: &str) -> String {
        self.tokens[user].clone()
    }

    pub fn get(&mut self, path: &str, token: Option<&str>) -> ApiResponse {
        self.svc.handle(&ApiRequest::get(path, token))
    }

    pub fn post(&mut self, path: &str, token: Option<&str>, body: Value) -> ApiResponse {
        self.svc.handle(&ApiRequest::post(path, token, body))
    }

    pub fn get_as(&mut self, user: &str, path: &str) -> ApiResponse {
        let t = self.token(user);
        self.get(path, Some(&t))
    }

    pub fn post_as(&mut self, user: &str, path: &str, body: Value) -> ApiResponse {
        let t = self.token(user);
        self.post(path, Some(&t), body)
    }

    /// Posts and insists on a 2xx reply.
    pub fn ok_post(&mut self, user: &str, path: &str, body: Value) -> Value {
        let r = self.post_as(user, path, body);
        assert!(r.status < 300, "POST {} as {} -> {} {:?}", path, user, r.status, r.body);
        r.json_body().cloned().unwrap_or(Value::Null)
    }

    pub fn ok_get(&mut self, user: &str, path: &str) -> Value {
        let r = self.get_as(user, path);
        assert!(r.status < 300, "GET {} as {} -> {} {:?}", path, user, r.status, r.body);
        r.json_body().cloned().unwrap_or(Value::Null)
    }

    pub fn login(&mut self, user: &str, password: &str) -> String {
        let r = self.post("/sessions", None, json!({ "username": user, "password": password }));
        assert_eq!(r.status, 201, "login {}: {:?}", user, r.body);
        let token = r.json_body().unwrap()["token"].as_str().unwrap().to_string();
        self.tokens.insert(user.to_string(), token.clone());
        token
    }

    /// Registers `name` (password `pw-<name>`), optionally approves it, and
    /// logs it in.
    pub fn user(&mut self, name: &str, approve: bool) -> String {
        let r = self.post(
            "/users",
            None,
            json!({ "username": name, "password": format!("pw-{}", name) }),
        );
        assert_eq!(r.status, 201, "register {}: {:?}", name, r.body);
        if approve {
            let admin = self.config.admin.username.clone();
            self.ok_post(&admin, &format!("/users/{}/approve", name), json!({}));
        }
        self.login(name, &format!("pw-{}", name))
    }

    /// Requests, approves and activates a block for `user`; returns its id.
    pub fn active_block(&mut self, user: &str, nodes: u32) -> u32 {
        let id = self.approved_block(user, nodes);
        let admin = self.config.admin.username.clone();
        let r = self.ok_post(&admin, &format!("/blocks/{}/activate", id), json!({}));
        assert_eq!(r["block"]["state"], "Active");
        id
    }

    pub fn approved_block(&mut self, user: &str, nodes: u32) -> u32 {
        let end = self.clock_now() + 30 * DAY;
        let req = self.ok_post(
            user,
            "/blocks/requests",
            json!({ "nodes": nodes, "end": end, "description": "test" }),
        );
        let admin = self.config.admin.username.clone();
        let out = self.ok_post(
            &admin,
            &format!("/blocks/requests/{}/review", req["id"]),
            json!({ "decision": "approve" }),
        );
        out["Approved"]["id"].as_u64().unwrap() as u32
    }

    pub fn clock_now(&self) -> u64 {
        self.svc.now().0
    }

    pub fn advance(&self, secs: u64) {
        self.clock.advance(secs);
    }

    /// Hash of the state rebuilt from the log alone.
    pub fn replayed_hash(&self) -> String {
        let (state, seq) = recover(&self.config, None, &self.store.lines()).expect("log replays");
        assert_eq!(seq, self.svc.last_seq());
        state.hash()
    }
}
