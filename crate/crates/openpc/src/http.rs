//! HTTP adapter. Every request goes through [`ApiService::handle`], so the
//! route table lives in one place.

use std::sync::{Arc, Mutex};

use axum::body::Body as HttpBody;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};

use crate::service::{ApiRequest, ApiService, Body, Method};

pub type Shared = Arc<Mutex<ApiService>>;

pub fn router(service: Shared) -> axum::Router {
    axum::Router::new().fallback(dispatch).with_state(service)
}

async fn dispatch(
    State(service): State<Shared>,
    method: axum::http::Method,
    uri: Uri,
    headers: HeaderMap,
    body: String,
) -> Response {
    let Some(method) = Method::parse(method.as_str()) else {
        return StatusCode::METHOD_NOT_ALLOWED.into_response();
    };
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    let path = uri
        .path_and_query()
        .map(|pq| pq.as_str().to_string())
        .unwrap_or_else(|| uri.path().to_string());
    let req = ApiRequest {
        method,
        path,
        body,
        token,
    };
    let handled = tokio::task::spawn_blocking(move || {
        let mut svc = service.lock().unwrap_or_else(|p| p.into_inner());
        svc.handle(&req)
    })
    .await;
    let resp = match handled {
        Ok(r) => r,
        Err(_) => return StatusCode::INTERNAL_SERVER_ERROR.into_response(),
    };
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let (content_type, bytes) = match resp.body {
        Body::Json(v) => ("application/json", v.to_string()),
        Body::Text(t) => ("text/plain; charset=utf-8", t),
    };
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, content_type)
        .body(HttpBody::from(bytes))
        .expect("static headers")
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(service: ApiService, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("openpc listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(Mutex::new(service))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
