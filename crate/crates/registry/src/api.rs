//! REST surface. Everything is JSON except `/metrics`.

use std::future::Future;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hawk_core::{EndpointId, FieldDefinition, FieldPath, MappingTemplate, TrafficRecord};
use serde::Deserialize;
use serde_json::json;

use crate::service::{QueryParams, Registry, RegistryError};
use crate::store::TimeRange;

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

impl IntoResponse for RegistryError {
    fn into_response(self) -> Response {
        let status = match &self {
            RegistryError::InvalidDefinition(_)
            | RegistryError::InvalidRecords(_)
            | RegistryError::UnknownQuery(_)
            | RegistryError::MissingParameter(_) => StatusCode::BAD_REQUEST,
            RegistryError::NotFound | RegistryError::TemplateNotFound(_) | RegistryError::NoObservations(_) => {
                StatusCode::NOT_FOUND
            }
            RegistryError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        let violations = match &self {
            RegistryError::InvalidDefinition(v) | RegistryError::InvalidRecords(v) => v.clone(),
            _ => Vec::new(),
        };
        let body = json!({ "error": self.code(), "message": self.to_string(), "violations": violations });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, RegistryError>;
type Shared = State<Arc<Registry>>;

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    from: Option<i64>,
    to: Option<i64>,
}

impl RangeQuery {
    fn range(&self) -> TimeRange {
        TimeRange::new(self.from, self.to)
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FieldKey {
    service: String,
    method: String,
    path_pattern: String,
    path: String,
}

impl FieldKey {
    fn split(self) -> (EndpointId, FieldPath) {
        (EndpointId::new(self.service, self.method, self.path_pattern), FieldPath::raw(self.path))
    }
}

#[derive(Debug, Deserialize)]
struct SuggestionQuery {
    service: String,
    method: String,
    path: String,
}

#[derive(Debug, Deserialize)]
struct AggregationQuery {
    from: Option<i64>,
    to: Option<i64>,
    purpose: Option<String>,
    field: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RopaQuery {
    from: Option<i64>,
    to: Option<i64>,
    /// Overrides `generatedAt` for reproducible exports.
    now: Option<i64>,
}

async fn post_records(State(reg): Shared, Json(batch): Json<Vec<TrafficRecord>>) -> ApiResult<impl IntoResponse> {
    let stored = reg.store_records(&batch)?;
    Ok(Json(json!({ "stored": stored })))
}

async fn get_records(State(reg): Shared, Query(q): Query<RangeQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.records(q.range())?))
}

async fn list_fields(State(reg): Shared) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.fields()?))
}

async fn upsert_field(State(reg): Shared, Json(def): Json<FieldDefinition>) -> ApiResult<impl IntoResponse> {
    reg.upsert_field(def.clone())?;
    Ok((StatusCode::OK, Json(def)))
}

async fn get_field(State(reg): Shared, Query(key): Query<FieldKey>) -> ApiResult<impl IntoResponse> {
    let (endpoint, path) = key.split();
    Ok(Json(reg.field(&endpoint, &path)?))
}

async fn delete_field(State(reg): Shared, Query(key): Query<FieldKey>) -> ApiResult<impl IntoResponse> {
    let (endpoint, path) = key.split();
    reg.delete_field(&endpoint, &path)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_templates(State(reg): Shared) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.templates()?))
}

async fn put_template(State(reg): Shared, Json(t): Json<MappingTemplate>) -> ApiResult<impl IntoResponse> {
    reg.put_template(t.clone())?;
    Ok(Json(t))
}

async fn get_template(State(reg): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.template(&id)?))
}

async fn delete_template(State(reg): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    reg.delete_template(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn apply_template(
    State(reg): Shared,
    Path(id): Path<String>,
    Json(endpoint): Json<EndpointId>,
) -> ApiResult<impl IntoResponse> {
    let created = reg.apply_template(&id, &endpoint)?;
    Ok(Json(json!({ "created": created })))
}

async fn suggestions(State(reg): Shared, Query(q): Query<SuggestionQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.suggest_mappings(&EndpointId::new(q.service, q.method, q.path))?))
}

async fn unmapped(State(reg): Shared, Query(q): Query<RangeQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(reg.unmapped_fields(q.range())?))
}

async fn aggregation(
    State(reg): Shared,
    Path(name): Path<String>,
    Query(q): Query<AggregationQuery>,
) -> ApiResult<impl IntoResponse> {
    let query = name.parse()?;
    let params = QueryParams { range: TimeRange::new(q.from, q.to), purpose: q.purpose, field: q.field };
    Ok(Json(reg.aggregate(query, &params)?))
}

async fn ropa(State(reg): Shared, Query(q): Query<RopaQuery>) -> ApiResult<impl IntoResponse> {
    let now = q.now.unwrap_or_else(hawk_core::now_millis);
    Ok(Json(reg.export_ropa(TimeRange::new(q.from, q.to), now)?))
}

async fn metrics(State(reg): Shared) -> ApiResult<impl IntoResponse> {
    Ok(([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], reg.metrics_exposition()?))
}

async fn health(State(reg): Shared) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "status": "ok", "records": reg.record_count()? })))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/records", post(post_records).get(get_records))
        .route("/v1/fields", get(list_fields).post(upsert_field).put(upsert_field))
        .route("/v1/fields/key", get(get_field).delete(delete_field))
        .route("/v1/templates", get(list_templates).post(put_template))
        .route("/v1/templates/{id}", get(get_template).delete(delete_template))
        .route("/v1/templates/{id}/apply", post(apply_template))
        .route("/v1/suggestions", get(suggestions))
        .route("/v1/unmapped", get(unmapped))
        .route("/v1/aggregations/{query}", get(aggregation))
        .route("/v1/ropa", get(ropa))
        .route("/metrics", get(metrics))
        .route("/-/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(registry)
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry)).with_graceful_shutdown(shutdown).await
}
