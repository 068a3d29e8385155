//! Weighted router between a stable and a canary upstream. Draws come
//! from a seeded generator, so a run with the same seed and request order
//! routes identically.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct Splitter {
    stable: String,
    canary: String,
    weight: AtomicU32,
    rng: Mutex<ChaCha8Rng>,
    to_stable: AtomicU64,
    to_canary: AtomicU64,
    history: Mutex<Vec<u32>>,
    http: Client<HttpConnector, Body>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SplitterStats {
    pub canary_percent: u32,
    pub to_stable: u64,
    pub to_canary: u64,
    /// Every weight applied through the control endpoint, in order.
    pub history: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WeightBody {
    canary_percent: u32,
}

impl Splitter {
    /// `stable` and `canary` are base URLs.
    pub fn new(stable: &str, canary: &str, seed: u64) -> Self {
        let mut connector = HttpConnector::new();
        connector.set_nodelay(true);
        Splitter {
            stable: stable.trim_end_matches('/').to_owned(),
            canary: canary.trim_end_matches('/').to_owned(),
            weight: AtomicU32::new(0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            to_stable: AtomicU64::new(0),
            to_canary: AtomicU64::new(0),
            history: Mutex::new(Vec::new()),
            http: Client::builder(TokioExecutor::new()).pool_idle_timeout(Duration::from_secs(30)).build(connector),
        }
    }

    pub fn set_weight(&self, percent: u32) -> Result<(), String> {
        if percent > 100 {
            return Err(format!("canaryPercent {percent} exceeds 100"));
        }
        self.weight.store(percent, Ordering::SeqCst);
        self.history.lock().unwrap().push(percent);
        Ok(())
    }

    /// Picks the canary with probability weight/100.
    pub fn pick_canary(&self) -> bool {
        let w = self.weight.load(Ordering::SeqCst);
        let draw: u32 = self.rng.lock().unwrap().random_range(0..100);
        draw < w
    }

    pub fn stats(&self) -> SplitterStats {
        SplitterStats {
            canary_percent: self.weight.load(Ordering::SeqCst),
            to_stable: self.to_stable.load(Ordering::SeqCst),
            to_canary: self.to_canary.load(Ordering::SeqCst),
            history: self.history.lock().unwrap().clone(),
        }
    }

    async fn forward(&self, request: Request) -> Response {
        let canary = self.pick_canary();
        let (counter, base) =
            if canary { (&self.to_canary, &self.canary) } else { (&self.to_stable, &self.stable) };
        counter.fetch_add(1, Ordering::SeqCst);
        let (mut parts, body) = request.into_parts();
        let target = format!("{base}{}", parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/"));
        parts.uri = match target.parse() {
            Ok(u) => u,
            Err(_) => return StatusCode::BAD_REQUEST.into_response(),
        };
        match self.http.request(Request::from_parts(parts, body)).await {
            Ok(resp) => resp.map(Body::new),
            Err(_) => StatusCode::BAD_GATEWAY.into_response(),
        }
    }
}

async fn control_weight(State(s): State<Arc<Splitter>>, Json(body): Json<WeightBody>) -> Response {
    match s.set_weight(body.canary_percent) {
        Ok(()) => Json(json!({ "canaryPercent": body.canary_percent })).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "error": "INVALID_WEIGHT", "message": e }))).into_response(),
    }
}

async fn control_stats(State(s): State<Arc<Splitter>>) -> Json<SplitterStats> {
    Json(s.stats())
}

async fn route(State(s): State<Arc<Splitter>>, request: Request) -> Response {
    s.forward(request).await
}

pub fn router(splitter: Arc<Splitter>) -> Router {
    Router::new()
        .route("/control/weight", post(control_weight))
        .route("/control/stats", get(control_stats))
        .fallback(route)
        .with_state(splitter)
}
