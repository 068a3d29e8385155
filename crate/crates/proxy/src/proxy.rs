use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderName, StatusCode, Uri, Version};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bytes::{Bytes, BytesMut};
use futures::StreamExt;
use hawk_collector::CollectorClient;
use hawk_core::{
    normalize_endpoint, summarize_message, Anomaly, EndpointId, ExchangeContext, ExtractionConfig, HttpMeta,
    MessageSummary, PatternRule, Phase, Side,
};
use http_body_util::BodyExt;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use tokio::sync::watch;
use tracing::debug;

use crate::config::{ProxyConfig, Role};
use crate::emit::{EmitStats, Emitter, SENDER_BACKOFF};
use crate::request_id::ensure_request_id;

/// Caller identity header set by instrumented services.
pub const CLIENT_HEADER: &str = "x-hawk-client";

pub struct Proxy {
    config: ProxyConfig,
    upstream: String,
    id_header: HeaderName,
    rules: Vec<PatternRule>,
    extraction: ExtractionConfig,
    http: Client<HttpConnector, Body>,
    emitter: Emitter,
}

/// A message body split into the part read for extraction and, when the
/// limit was hit, the unread remainder.
struct Buffered {
    head: Bytes,
    rest: Option<Body>,
}

impl Buffered {
    fn into_body(self) -> Body {
        match self.rest {
            None => Body::from(self.head),
            Some(rest) => {
                let head = futures::stream::once(async move { Ok::<_, axum::Error>(self.head) });
                Body::from_stream(head.chain(rest.into_data_stream()))
            }
        }
    }
}

async fn buffer(body: Body, limit: usize) -> Result<Buffered, axum::Error> {
    let mut body = body;
    let mut head = BytesMut::new();
    while let Some(frame) = body.frame().await {
        if let Ok(data) = frame?.into_data() {
            head.extend_from_slice(&data);
            if head.len() > limit {
                return Ok(Buffered { head: head.freeze(), rest: Some(body) });
            }
        }
    }
    Ok(Buffered { head: head.freeze(), rest: None })
}

fn version_label(v: Version) -> &'static str {
    match v {
        Version::HTTP_09 => "HTTP/0.9",
        Version::HTTP_10 => "HTTP/1.0",
        Version::HTTP_2 => "HTTP/2",
        Version::HTTP_3 => "HTTP/3",
        _ => "HTTP/1.1",
    }
}

impl Proxy {
    pub fn new(config: ProxyConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let mut connector = HttpConnector::new();
        connector.set_nodelay(true);
        connector.set_connect_timeout(Some(Duration::from_secs(2)));
        let http = Client::builder(TokioExecutor::new()).pool_idle_timeout(Duration::from_secs(30)).build(connector);
        Ok(Proxy {
            upstream: config.upstream_base(),
            id_header: config.request_id_header.parse()?,
            rules: config.rules()?,
            extraction: ExtractionConfig { max_body_bytes: config.max_body_bytes, ..ExtractionConfig::default() },
            emitter: Emitter::new(config.emit_buffer_capacity),
            http,
            config,
        })
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    pub fn stats(&self) -> EmitStats {
        self.emitter.stats()
    }

    pub fn emitter(&self) -> &Emitter {
        &self.emitter
    }

    fn summarize(&self, headers: &HeaderMap, body: &Buffered) -> MessageSummary {
        let pairs: Vec<(&str, &[u8])> = headers.iter().map(|(k, v)| (k.as_str(), v.as_bytes())).collect();
        if body.rest.is_none() {
            return summarize_message(&body.head, pairs.iter().copied(), &self.extraction);
        }
        let declared = headers
            .get(axum::http::header::CONTENT_LENGTH)
            .and_then(|v| v.to_str().ok()?.parse::<u64>().ok());
        MessageSummary {
            header_keys: hawk_core::extract_header_keys(pairs, &self.extraction),
            payload_paths: Default::default(),
            payload_bytes: declared.unwrap_or(body.head.len() as u64),
            anomaly: Some(Anomaly::BodyTooLarge),
        }
    }

    fn context(&self, request_id: String, headers: &HeaderMap, uri: &Uri, method: &str, version: Version) -> ExchangeContext {
        let raw_path = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
        let path = hawk_core::endpoint::strip_query(raw_path);
        let host = headers
            .get(axum::http::header::HOST)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned)
            .or_else(|| uri.authority().map(|a| a.to_string()))
            .unwrap_or_else(|| self.config.upstream_address.clone());
        let endpoint = normalize_endpoint(&self.config.service_name, method, path, &self.rules)
            .unwrap_or_else(|_| EndpointId::new(&self.config.service_name, method, path));
        let client_service = headers
            .get(CLIENT_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned)
            .or_else(|| self.config.client_name.clone());
        ExchangeContext {
            request_id,
            http: HttpMeta {
                protocol: version_label(version).into(),
                method: method.to_owned(),
                host,
                path: path.to_owned(),
            },
            endpoint,
            client_service,
        }
    }

    /// Forwards one exchange and emits the records this instance's role
    /// covers, in stage order. Emission never delays or fails the exchange.
    pub async fn handle_exchange(&self, request: Request) -> Response {
        let role = self.config.role;
        let (mut parts, body) = request.into_parts();
        let request_id = ensure_request_id(&mut parts.headers, &self.id_header);
        let arrived = hawk_core::now_millis();
        let body = match buffer(body, self.config.max_body_bytes).await {
            Ok(b) => b,
            Err(e) => {
                debug!(error = %e, "client body aborted");
                return StatusCode::BAD_REQUEST.into_response();
            }
        };
        let ctx = self.context(request_id, &parts.headers, &parts.uri, parts.method.as_str(), parts.version);
        let req_summary = self.summarize(&parts.headers, &body);
        let mut first = role.client().then(|| ctx.record(Phase::Request, Side::Client, arrived, &req_summary));
        let mut second = role.server().then(|| ctx.record(Phase::Request, Side::Server, arrived, &req_summary));

        let target = format!("{}{}", self.upstream, parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/"));
        parts.uri = match target.parse() {
            Ok(u) => u,
            Err(_) => return StatusCode::BAD_REQUEST.into_response(),
        };
        let outgoing = Request::from_parts(parts, body.into_body());
        let upstream = self.http.request(outgoing).await;

        let resp = match upstream {
            Ok(r) => r,
            Err(e) => {
                debug!(error = %e, upstream = %self.upstream, "upstream unreachable");
                // the last stage this instance saw carries the marker
                match (&mut second, &mut first) {
                    (Some(r), _) | (None, Some(r)) => r.anomaly = Some(Anomaly::NoUpstream),
                    _ => {}
                }
                first.into_iter().chain(second).for_each(|r| {
                    self.emitter.emit(r);
                });
                return (StatusCode::BAD_GATEWAY, "upstream unreachable").into_response();
            }
        };
        first.into_iter().chain(second).for_each(|r| {
            self.emitter.emit(r);
        });

        let (parts, body) = resp.into_parts();
        let body = match buffer(Body::new(body), self.config.max_body_bytes).await {
            Ok(b) => b,
            Err(e) => {
                debug!(error = %e, "upstream body aborted");
                return StatusCode::BAD_GATEWAY.into_response();
            }
        };
        let responded = hawk_core::now_millis();
        let resp_summary = self.summarize(&parts.headers, &body);
        if role.server() {
            self.emitter.emit(ctx.record(Phase::Response, Side::Server, responded, &resp_summary));
        }
        if role.client() {
            self.emitter.emit(ctx.record(Phase::Response, Side::Client, responded, &resp_summary));
        }
        Response::from_parts(parts, body.into_body())
    }
}

async fn exchange(State(p): State<Arc<Proxy>>, request: Request) -> Response {
    p.handle_exchange(request).await
}

async fn stats(State(p): State<Arc<Proxy>>) -> Json<EmitStats> {
    Json(p.stats())
}

pub fn router(proxy: Arc<Proxy>) -> Router {
    Router::new().route("/-/stats", get(stats)).fallback(exchange).with_state(proxy)
}

/// Serves until `shutdown` resolves, then gives the sender one final
/// chance to flush buffered records.
pub async fn serve(
    listener: tokio::net::TcpListener,
    proxy: Arc<Proxy>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let client = CollectorClient::new(&proxy.config.collector_endpoint, &format!("proxy:{}", proxy.config.service_name));
    let (stop_tx, stop_rx) = watch::channel(false);
    let sender = {
        let p = proxy.clone();
        tokio::spawn(async move { p.emitter.run_sender(client, SENDER_BACKOFF, stop_rx).await })
    };
    let result = axum::serve(listener, router(proxy)).with_graceful_shutdown(shutdown).await;
    let _ = stop_tx.send(true);
    let _ = tokio::time::timeout(Duration::from_secs(5), sender).await;
    result
}

impl Role {
    /// Stage numbers this role emits, in order.
    pub fn stages(self) -> &'static [u8] {
        match self {
            Role::ClientSide => &[1, 4],
            Role::ServerSide => &[2, 3],
            Role::Both => &[1, 2, 3, 4],
        }
    }
}
