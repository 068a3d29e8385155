use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointId;
use crate::extract::Anomaly;
use crate::path::FieldPath;

pub const ALLOWED_METHODS: [&str; 7] = ["GET", "POST", "PUT", "PATCH", "DELETE", "HEAD", "OPTIONS"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Client,
    Server,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Request => "request",
            Phase::Response => "response",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Client => "client",
            Side::Server => "server",
        })
    }
}

/// Position of a (side, phase) stage within an exchange: ① client request,
/// ② server request, ③ server response, ④ client response.
pub fn stage(side: Side, phase: Phase) -> u8 {
    match (side, phase) {
        (Side::Client, Phase::Request) => 1,
        (Side::Server, Phase::Request) => 2,
        (Side::Server, Phase::Response) => 3,
        (Side::Client, Phase::Response) => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HttpMeta {
    pub protocol: String,
    pub method: String,
    pub host: String,
    pub path: String,
}

/// One value-free observation of a message at one stage of an exchange.
///
/// Only header names and payload paths are kept; no field of this type is
/// ever filled with a header or payload value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "WireRecord", from = "WireRecord")]
pub struct TrafficRecord {
    pub request_id: String,
    pub phase: Phase,
    pub side: Side,
    pub timestamp: i64,
    pub http: HttpMeta,
    pub endpoint: EndpointId,
    /// Logical name of the calling service, when the interceptor knows it.
    pub client_service: Option<String>,
    pub header_keys: BTreeSet<String>,
    pub payload_paths: BTreeSet<FieldPath>,
    pub payload_bytes: u64,
    /// Set when the body could not be reduced to paths or the exchange
    /// stopped at this stage.
    pub anomaly: Option<Anomaly>,
}

/// Natural key used for deduplication downstream.
pub type RecordKey = (String, Phase, Side);

impl TrafficRecord {
    pub fn key(&self) -> RecordKey {
        (self.request_id.clone(), self.phase, self.side)
    }

    pub fn stage(&self) -> u8 {
        stage(self.side, self.phase)
    }

    /// Client identity used by aggregations; unknown callers are grouped.
    pub fn client_name(&self) -> &str {
        self.client_service.as_deref().unwrap_or(UNKNOWN_CLIENT)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialization")
    }
}

pub const UNKNOWN_CLIENT: &str = "unknown";

/// Flat canonical encoding.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireRecord {
    #[serde(default)]
    request_id: String,
    phase: Phase,
    side: Side,
    timestamp: i64,
    protocol: String,
    method: String,
    host: String,
    path: String,
    service: String,
    path_pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    client_service: Option<String>,
    #[serde(default)]
    header_keys: BTreeSet<String>,
    #[serde(default)]
    payload_paths: BTreeSet<FieldPath>,
    #[serde(default)]
    payload_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anomaly: Option<Anomaly>,
}

impl From<TrafficRecord> for WireRecord {
    fn from(r: TrafficRecord) -> Self {
        WireRecord {
            request_id: r.request_id,
            phase: r.phase,
            side: r.side,
            timestamp: r.timestamp,
            protocol: r.http.protocol,
            method: r.http.method,
            host: r.http.host,
            path: r.http.path,
            service: r.endpoint.service,
            path_pattern: r.endpoint.path_pattern,
            client_service: r.client_service,
            header_keys: r.header_keys,
            payload_paths: r.payload_paths,
            payload_bytes: r.payload_bytes,
            anomaly: r.anomaly,
        }
    }
}

impl From<WireRecord> for TrafficRecord {
    fn from(w: WireRecord) -> Self {
        TrafficRecord {
            request_id: w.request_id,
            phase: w.phase,
            side: w.side,
            timestamp: w.timestamp,
            http: HttpMeta {
                protocol: w.protocol,
                method: w.method.clone(),
                host: w.host,
                path: w.path,
            },
            endpoint: EndpointId {
                service: w.service,
                method: w.method,
                path_pattern: w.path_pattern,
            },
            client_service: w.client_service,
            header_keys: w.header_keys,
            payload_paths: w.payload_paths,
            payload_bytes: w.payload_bytes,
            anomaly: w.anomaly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    Counter,
    Gauge,
    Histogram,
}

impl MetricKind {
    /// Type name used in the text exposition `# TYPE` line.
    pub fn exposition_name(self) -> &'static str {
        match self {
            MetricKind::Counter => "counter",
            MetricKind::Gauge => "gauge",
            MetricKind::Histogram => "histogram",
        }
    }
}
