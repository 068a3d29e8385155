//! In-process toy services with scripted bodies.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use hawk_proxy::CLIENT_HEADER;
use serde_json::json;

use crate::topology::{concrete_path, render, EndpointSpec, ServiceSpec, TOKEN_HEADER};

pub struct ToyService {
    spec: ServiceSpec,
    /// Base URL per callee, normally that callee's outbound proxy.
    downstream: BTreeMap<String, String>,
    http: reqwest::Client,
    counter: AtomicU64,
}

pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .pool_max_idle_per_host(64)
        .timeout(Duration::from_secs(30))
        .build()
        .expect("http client")
}

/// Blocks a worker thread instead of using the timer wheel, whose
/// millisecond granularity would dominate short service times.
async fn work(d: Duration) {
    if !d.is_zero() {
        let _ = tokio::task::spawn_blocking(move || std::thread::sleep(d)).await;
    }
}

impl ToyService {
    pub fn new(spec: ServiceSpec, downstream: BTreeMap<String, String>) -> Self {
        ToyService { spec, downstream, http: http_client(), counter: AtomicU64::new(0) }
    }

    async fn call_downstream(&self, endpoint: &EndpointSpec, token: &str, all: &[ServiceSpec]) -> Result<(), String> {
        for call in &endpoint.downstream_calls {
            let base = self.downstream.get(&call.service).ok_or_else(|| format!("no route to {}", call.service))?;
            let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
            let url = format!("{base}{}", concrete_path(&call.path, n));
            let method: reqwest::Method = call.method.parse().map_err(|_| format!("bad method {}", call.method))?;
            let mut req = self
                .http
                .request(method, url)
                .header(CLIENT_HEADER, &self.spec.name)
                .header(TOKEN_HEADER, token);
            if let Some(host) = &call.host {
                req = req.header("host", host);
            }
            let body = all
                .iter()
                .find(|s| s.name == call.service)
                .and_then(|s| s.endpoint(&call.method, &call.path))
                .and_then(|e| e.request_body_template.as_ref());
            if let Some(t) = body {
                req = req.header("content-type", "application/json").body(render(t, token).to_string());
            }
            let resp = req.send().await.map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("{} answered {}", call.service, resp.status()));
            }
            let _ = resp.bytes().await;
        }
        Ok(())
    }

    async fn handle(&self, method: &str, path: &str, headers: &HeaderMap, all: &[ServiceSpec]) -> Response {
        let Some(endpoint) = self.spec.endpoint(method, path) else {
            return (StatusCode::NOT_FOUND, Json(json!({"error": "no such endpoint"}))).into_response();
        };
        let token = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()).unwrap_or("anon").to_owned();
        if let Err(e) = self.call_downstream(endpoint, &token, all).await {
            return (StatusCode::BAD_GATEWAY, Json(json!({"error": e}))).into_response();
        }
        work(Duration::from_millis(self.spec.service_time_ms)).await;
        match &endpoint.response_body_template {
            Some(t) => {
                ([("content-type", "application/json")], render(t, &token).to_string()).into_response()
            }
            None => StatusCode::NO_CONTENT.into_response(),
        }
    }
}

#[derive(Clone)]
struct Shared {
    service: Arc<ToyService>,
    all: Arc<Vec<ServiceSpec>>,
}

async fn dispatch(State(s): State<Shared>, request: Request) -> Response {
    let (parts, body) = request.into_parts();
    // drain the request so keep-alive connections stay usable
    let _ = axum::body::to_bytes(body, 16 * 1024 * 1024).await;
    s.service.handle(parts.method.as_str(), parts.uri.path(), &parts.headers, &s.all).await
}

/// `all` supplies request bodies of downstream endpoints.
pub fn service_router(service: ToyService, all: Vec<ServiceSpec>) -> Router {
    let name = service.spec.name.clone();
    Router::new()
        .route("/-/health", get(move || async move { Json(json!({"status": "ok", "service": name})) }))
        .fallback(dispatch)
        .with_state(Shared { service: Arc::new(service), all: Arc::new(all) })
}

/// Echoes the request body after `service_time`; the benchmark upstream.
pub fn echo_router(service_time: Duration) -> Router {
    Router::new().fallback(move |headers: HeaderMap, body: Bytes| async move {
        work(service_time).await;
        let ct = headers.get("content-type").cloned();
        let mut resp = body.into_response();
        if let Some(ct) = ct {
            resp.headers_mut().insert("content-type", ct);
        }
        resp
    })
}
