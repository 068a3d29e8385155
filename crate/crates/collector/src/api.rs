use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, DefaultBodyLimit, Query, Request, State};
use axum::http::{Extensions, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::ingest::{Collector, IngestError, Ingested, MAX_BODY_BYTES};

/// Optional sender identity; the peer address is used when absent.
pub const SOURCE_HEADER: &str = "x-hawk-source";

impl IntoResponse for IngestError {
    fn into_response(self) -> Response {
        let status = match self {
            IngestError::PayloadTooLarge(_) | IngestError::BatchTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            IngestError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

fn source_of(headers: &HeaderMap, extensions: &Extensions) -> String {
    headers
        .get(SOURCE_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .or_else(|| extensions.get::<ConnectInfo<SocketAddr>>().map(|ConnectInfo(a)| a.to_string()))
        .unwrap_or_else(|| "unknown".into())
}

async fn ingest(State(c): State<Arc<Collector>>, request: Request) -> Result<Response, IngestError> {
    let (parts, body) = request.into_parts();
    let source = source_of(&parts.headers, &parts.extensions);
    let body: Bytes = match axum::body::to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b,
        Err(_) => return Err(IngestError::PayloadTooLarge(MAX_BODY_BYTES + 1)),
    };
    let c2 = c.clone();
    let outcome = tokio::task::spawn_blocking(move || c2.ingest(&body, &source, hawk_core::now_millis()))
        .await
        .map_err(|e| IngestError::Storage(std::io::Error::other(e)))??;
    Ok(match outcome {
        Ingested::Batch(r) => (StatusCode::OK, Json(r)).into_response(),
        Ingested::Malformed(r) => (StatusCode::BAD_REQUEST, Json(r)).into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct DeadLetterQuery {
    from: Option<i64>,
    to: Option<i64>,
    page: Option<usize>,
    size: Option<usize>,
}

async fn dead_letters(State(c): State<Arc<Collector>>, Query(q): Query<DeadLetterQuery>) -> impl IntoResponse {
    Json(c.dead_letters.list(q.from, q.to, q.page.unwrap_or(1), q.size.unwrap_or(50).min(1000)))
}

async fn health(State(c): State<Arc<Collector>>) -> impl IntoResponse {
    let totals = c.totals();
    Json(json!({
        "status": "ok",
        "received": totals.received,
        "accepted": totals.accepted,
        "deadLettered": totals.dead_lettered,
        "spoolPendingBytes": c.spool.pending_bytes(),
        "deadLetterCount": c.dead_letters.len(),
    }))
}

pub fn router(collector: Arc<Collector>) -> Router {
    Router::new()
        .route("/v1/records", post(ingest))
        .route("/v1/deadletters", get(dead_letters))
        .route("/-/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(collector)
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    collector: Arc<Collector>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(collector).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(shutdown)
        .await
}
