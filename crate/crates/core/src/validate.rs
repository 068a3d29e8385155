use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::record::{TrafficRecord, ALLOWED_METHODS};

/// Names the invariant a record failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    EmptyRequestId,
    NegativeTimestamp,
    BadProtocol,
    BadMethod,
    EmptyHost,
    BadPath,
    EmptyService,
    EndpointMethodMismatch,
    BadPathPattern,
    BadHeaderKey,
    BadFieldPath,
    // collector-level codes for input that never became a record
    MalformedRecord,
    MalformedBatch,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::EmptyRequestId => "EMPTY_REQUEST_ID",
            Violation::NegativeTimestamp => "NEGATIVE_TIMESTAMP",
            Violation::BadProtocol => "BAD_PROTOCOL",
            Violation::BadMethod => "BAD_METHOD",
            Violation::EmptyHost => "EMPTY_HOST",
            Violation::BadPath => "BAD_PATH",
            Violation::EmptyService => "EMPTY_SERVICE",
            Violation::EndpointMethodMismatch => "ENDPOINT_METHOD_MISMATCH",
            Violation::BadPathPattern => "BAD_PATH_PATTERN",
            Violation::BadHeaderKey => "BAD_HEADER_KEY",
            Violation::BadFieldPath => "BAD_FIELD_PATH",
            Violation::MalformedRecord => "MALFORMED_RECORD",
            Violation::MalformedBatch => "MALFORMED_BATCH",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Checks every record-level invariant. Empty result means valid; each
/// violated invariant is reported once.
pub fn validate_record(record: &TrafficRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.request_id.is_empty() {
        out.push(Violation::EmptyRequestId);
    }
    if record.timestamp < 0 {
        out.push(Violation::NegativeTimestamp);
    }
    if !record.http.protocol.starts_with("HTTP/") {
        out.push(Violation::BadProtocol);
    }
    if !ALLOWED_METHODS.contains(&record.http.method.as_str()) {
        out.push(Violation::BadMethod);
    }
    if record.http.host.is_empty() {
        out.push(Violation::EmptyHost);
    }
    if !record.http.path.starts_with('/') {
        out.push(Violation::BadPath);
    }
    if record.endpoint.service.is_empty() {
        out.push(Violation::EmptyService);
    }
    if record.endpoint.method != record.http.method {
        out.push(Violation::EndpointMethodMismatch);
    }
    if !record.endpoint.path_pattern.starts_with('/') {
        out.push(Violation::BadPathPattern);
    }
    if record
        .header_keys
        .iter()
        .any(|k| k.is_empty() || k.bytes().any(|b| b.is_ascii_uppercase() || b.is_ascii_whitespace()))
    {
        out.push(Violation::BadHeaderKey);
    }
    if record.payload_paths.iter().any(|p| !p.is_valid()) {
        out.push(Violation::BadFieldPath);
    }
    out
}

/// Checks the timestamp ordering ① ≤ ② ≤ ③ ≤ ④ for the records of each
/// exchange. Returns the request ids that violate it.
pub fn check_exchange_order<'a>(records: impl IntoIterator<Item = &'a TrafficRecord>) -> Vec<String> {
    let mut by_id: BTreeMap<&str, Vec<(u8, i64)>> = BTreeMap::new();
    for r in records {
        by_id.entry(&r.request_id).or_default().push((r.stage(), r.timestamp));
    }
    by_id
        .into_iter()
        .filter_map(|(id, mut stages)| {
            stages.sort_unstable();
            let ordered = stages.windows(2).all(|w| w[0].1 <= w[1].1);
            (!ordered).then(|| id.to_owned())
        })
        .collect()
}
