#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use hawk_core::TrafficRecord;
use hawk_proxy::{Proxy, ProxyConfig, Role};
use serde_json::json;

pub async fn spawn(router: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    addr
}

/// A port nothing listens on.
pub async fn dead_port() -> SocketAddr {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap()
}

/// What the upstream saw: headers as (name, value) and the body.
#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub uri: String,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

#[derive(Clone, Default)]
pub struct Upstream {
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

/// Echoes the request body back with the request's content type.
pub async fn echo_upstream() -> (SocketAddr, Upstream) {
    let up = Upstream::default();
    async fn handle(State(up): State<Upstream>, req: Request) -> impl IntoResponse {
        let (parts, body) = req.into_parts();
        let body = axum::body::to_bytes(body, usize::MAX).await.unwrap();
        let ct = parts.headers.get("content-type").cloned();
        up.seen.lock().unwrap().push(Seen {
            method: parts.method.to_string(),
            uri: parts.uri.to_string(),
            headers: parts
                .headers
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_owned()))
                .collect(),
            body: body.clone(),
        });
        let mut resp = (StatusCode::OK, body).into_response();
        if let Some(ct) = ct {
            resp.headers_mut().insert("content-type", ct);
        }
        resp
    }
    let addr = spawn(Router::new().fallback(handle).with_state(up.clone())).await;
    (addr, up)
}

/// Collector stand-in. Answers with the scripted statuses first, then 200,
/// and keeps every accepted record plus the arrival time of each attempt.
#[derive(Clone, Default)]
pub struct Sink {
    pub records: Arc<Mutex<Vec<TrafficRecord>>>,
    pub attempts: Arc<Mutex<Vec<Instant>>>,
    pub script: Arc<Mutex<Vec<u16>>>,
}

impl Sink {
    pub fn records(&self) -> Vec<TrafficRecord> {
        self.records.lock().unwrap().clone()
    }

    pub async fn wait_for(&self, n: usize, limit: Duration) -> Vec<TrafficRecord> {
        let start = Instant::now();
        while self.records.lock().unwrap().len() < n && start.elapsed() < limit {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        self.records()
    }
}

pub async fn sink(script: Vec<u16>) -> (SocketAddr, Sink) {
    let s = Sink { script: Arc::new(Mutex::new(script)), ..Sink::default() };
    async fn ingest(State(s): State<Sink>, body: Bytes) -> impl IntoResponse {
        s.attempts.lock().unwrap().push(Instant::now());
        let scripted = {
            let mut script = s.script.lock().unwrap();
            (!script.is_empty()).then(|| script.remove(0))
        };
        if let Some(code) = scripted.filter(|c| *c != 200) {
            return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "scripted"}))).into_response();
        }
        let batch: Vec<TrafficRecord> = serde_json::from_slice(&body).unwrap();
        let n = batch.len();
        s.records.lock().unwrap().extend(batch);
        Json(json!({"accepted": n, "deadLettered": 0})).into_response()
    }
    let addr = spawn(Router::new().route("/v1/records", post(ingest)).with_state(s.clone())).await;
    (addr, s)
}

pub fn config(upstream: SocketAddr, collector: SocketAddr, role: Role) -> ProxyConfig {
    ProxyConfig::new(
        "127.0.0.1:0".parse().unwrap(),
        &upstream.to_string(),
        "orders",
        role,
        &format!("http://{collector}"),
    )
}

pub async fn start_proxy(cfg: ProxyConfig) -> (SocketAddr, Arc<Proxy>) {
    let proxy = Arc::new(Proxy::new(cfg).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let p = proxy.clone();
    tokio::spawn(async move { hawk_proxy::serve(listener, p, std::future::pending()).await.unwrap() });
    (addr, proxy)
}
