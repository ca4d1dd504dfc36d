use std::sync::{Arc, Mutex};

use openpc::config::ServiceConfig;
use openpc::{ApiService, ManualClock, MemoryStore};
use serde_json::{json, Value};

struct Server {
    base: String,
    _rt: tokio::runtime::Runtime,
}

fn start() -> Server {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let svc = ApiService::open(
        ServiceConfig::default(),
        Box::new(MemoryStore::default()),
        Box::new(ManualClock::new(5_000)),
    )
    .unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = openpc::http::router(Arc::new(Mutex::new(svc)));
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{}", addr),
        _rt: rt,
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn post(a: &ureq::Agent, url: &str, token: Option<&str>, body: Value) -> (u16, String, String) {
    let mut req = a.post(url);
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {}", t));
    }
    let mut r = req.send_json(&body).unwrap();
    let ct = r.headers().get("content-type").unwrap().to_str().unwrap().to_string();
    (r.status().as_u16(), ct, r.body_mut().read_to_string().unwrap())
}

fn get(a: &ureq::Agent, url: &str, token: Option<&str>) -> (u16, String, String) {
    let mut req = a.get(url);
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {}", t));
    }
    let mut r = req.call().unwrap();
    let ct = r.headers().get("content-type").unwrap().to_str().unwrap().to_string();
    (r.status().as_u16(), ct, r.body_mut().read_to_string().unwrap())
}

#[test]
fn block_lifecycle_over_http() {
    let s = start();
    let a = agent();
    let u = |p: &str| format!("{}{}", s.base, p);

    let (status, _, _) = get(&a, &u("/nodes"), None);
    assert_eq!(status, 401);

    let (_, _, body) = post(&a, &u("/sessions"), None, json!({ "username": "admin", "password": "admin" }));
    let admin: Value = serde_json::from_str(&body).unwrap();
    let admin = admin["token"].as_str().unwrap().to_string();

    let (status, ct, _) = post(&a, &u("/users"), None, json!({ "username": "user01", "password": "pw" }));
    assert_eq!((status, ct.as_str()), (201, "application/json"));
    assert_eq!(post(&a, &u("/users/user01/approve"), Some(&admin), json!({})).0, 200);
    let (_, _, body) = post(&a, &u("/sessions"), None, json!({ "username": "user01", "password": "pw" }));
    let user: Value = serde_json::from_str(&body).unwrap();
    let user = user["token"].as_str().unwrap().to_string();

    let (status, _, body) = post(&a, &u("/blocks/requests"), Some(&user), json!({ "nodes": 4, "end": 500_000 }));
    assert_eq!(status, 201, "{}", body);
    assert_eq!(
        post(&a, &u("/blocks/requests/1/review"), Some(&user), json!({ "decision": "approve" })).0,
        403
    );
    assert_eq!(
        post(&a, &u("/blocks/requests/1/review"), Some(&admin), json!({ "decision": "approve" })).0,
        200
    );
    let (status, _, body) = post(&a, &u("/blocks/1/activate"), Some(&admin), json!({}));
    assert_eq!(status, 200, "{}", body);

    let (status, ct, script) = get(&a, &u("/blocks/1/queue"), Some(&user));
    assert_eq!(status, 200);
    assert!(ct.starts_with("text/plain"));
    assert!(script.starts_with("create queue block01\n"));
    assert!(script.contains("set queue block01 acl_users = user01\n"));

    let (status, _, body) = get(&a, &u("/blocks/requests?state=approved"), Some(&admin));
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap().as_array().unwrap().len(), 1);

    let (status, _, body) = post(&a, &u("/queues/block01/jobs"), Some(&user), json!({ "cpu_seconds": 3 }));
    assert_eq!(status, 201, "{}", body);
    let job: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(job["id"], "block01.1");
    assert_eq!(job["state"], "Running");
    assert_eq!(job["allowed_actions"], json!(["suspend", "stop"]));

    let (status, _, body) = post(&a, &u("/gateway/commands"), Some(&user), json!({ "block": 1, "command": "qstat block01" }));
    assert_eq!(status, 200, "{}", body);
    let routed: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(routed["forwarded_to"], "MASTER");
    assert!(routed["response"]["payload"].as_str().unwrap().contains("block01.1 RUNNING user01"));

    let (status, _, _) = get(&a, &u("/jobs/block01.1/logs"), Some(&user));
    assert_eq!(status, 200);
    let (status, _, _) = get(&a, &u("/no/such/route"), Some(&user));
    assert_eq!(status, 404);
}
