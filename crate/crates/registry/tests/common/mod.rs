#![allow(dead_code)]

use std::sync::Arc;

use hawk_core::{
    build_record, EndpointId, ExchangeContext, ExtractionConfig, FieldAttributes, FieldDefinition, FieldPath,
    HttpMeta, Phase, Side, TrafficRecord,
};
use hawk_registry::{MemoryStore, Policy, Registry};

pub fn registry() -> Registry {
    Registry::new(Arc::new(MemoryStore::new()), Policy::default()).unwrap()
}

/// The four records of one exchange from `client` to `server`, extracted
/// from real JSON bodies.
pub fn exchange(
    id: &str,
    client: &str,
    server: &str,
    host: &str,
    path: &str,
    ts: i64,
    request: &str,
    response: &str,
) -> Vec<TrafficRecord> {
    let ctx = ExchangeContext {
        request_id: id.into(),
        http: HttpMeta { protocol: "HTTP/1.1".into(), method: "POST".into(), host: host.into(), path: path.into() },
        endpoint: EndpointId::new(server, "POST", path),
        client_service: Some(client.into()),
    };
    let cfg = ExtractionConfig::default();
    let headers = [("content-type", "application/json")];
    [
        (Phase::Request, Side::Client, request, 0),
        (Phase::Request, Side::Server, request, 1),
        (Phase::Response, Side::Server, response, 2),
        (Phase::Response, Side::Client, response, 3),
    ]
    .into_iter()
    .map(|(phase, side, body, dt)| build_record(&ctx, phase, side, ts + dt, body.as_bytes(), headers, &cfg).0)
    .collect()
}

pub fn simple(id: &str, client: &str, server: &str, ts: i64, request: &str) -> Vec<TrafficRecord> {
    exchange(id, client, server, server, &format!("/{}", server.to_lowercase()), ts, request, "{}")
}

pub fn attributes(name: &str, purposes: &[&str]) -> FieldAttributes {
    FieldAttributes {
        name: name.into(),
        description: String::new(),
        personal_data: !purposes.is_empty(),
        special_category: false,
        purposes: purposes.iter().map(|p| p.to_string()).collect(),
        legal_basis: if purposes.is_empty() { String::new() } else { "contract".into() },
        recipients: vec![],
        storage_period: None,
    }
}

pub fn definition(endpoint: &EndpointId, path: &str, name: &str, purposes: &[&str]) -> FieldDefinition {
    FieldDefinition::new(endpoint.clone(), FieldPath::raw(path), attributes(name, purposes))
}
