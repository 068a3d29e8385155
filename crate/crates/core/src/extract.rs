//! Cleaning transformation: message body and headers in, structure out.
//!
//! Payloads are parsed and walked, but only property paths leave this
//! module. Array indices collapse to `[*]` and both intermediate and leaf
//! paths are emitted, so whole subtrees can be labelled.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::endpoint::EndpointId;
use crate::path::{write_key, FieldPath};
use crate::record::{HttpMeta, Phase, Side, TrafficRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArrayMode {
    #[default]
    Collapse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ExtractionConfig {
    pub max_body_bytes: usize,
    pub array_mode: ArrayMode,
    /// Exact media types, or `+suffix` entries matching structured syntax
    /// suffixes such as `application/problem+json`.
    pub supported_content_types: Vec<String>,
    /// Lowercase header names that are never recorded.
    pub header_deny_list: BTreeSet<String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: 1_048_576,
            array_mode: ArrayMode::Collapse,
            supported_content_types: vec!["application/json".into(), "+json".into()],
            header_deny_list: ["authorization", "cookie", "set-cookie"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl ExtractionConfig {
    pub fn supports(&self, content_type: &str) -> bool {
        let media = content_type
            .split(';')
            .next()
            .unwrap_or("")
            .trim()
            .to_ascii_lowercase();
        self.supported_content_types.iter().any(|t| {
            let t = t.to_ascii_lowercase();
            if t.starts_with('+') {
                media.ends_with(&t) && media.len() > t.len()
            } else {
                media == t
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("UNSUPPORTED_CONTENT_TYPE")]
    UnsupportedContentType,
    #[error("BODY_TOO_LARGE")]
    BodyTooLarge,
    #[error("MALFORMED_BODY")]
    MalformedBody,
}

/// Out-of-band flag attached to an observation whose body could not be
/// reduced to paths, or whose exchange did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Anomaly {
    UnsupportedContentType,
    BodyTooLarge,
    MalformedBody,
    NoUpstream,
}

impl From<ExtractError> for Anomaly {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::UnsupportedContentType => Anomaly::UnsupportedContentType,
            ExtractError::BodyTooLarge => Anomaly::BodyTooLarge,
            ExtractError::MalformedBody => Anomaly::MalformedBody,
        }
    }
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Anomaly::UnsupportedContentType => "UNSUPPORTED_CONTENT_TYPE",
            Anomaly::BodyTooLarge => "BODY_TOO_LARGE",
            Anomaly::MalformedBody => "MALFORMED_BODY",
            Anomaly::NoUpstream => "NO_UPSTREAM",
        })
    }
}

pub fn extract_paths(
    body: &[u8],
    content_type: Option<&str>,
    cfg: &ExtractionConfig,
) -> Result<BTreeSet<FieldPath>, ExtractError> {
    if body.len() > cfg.max_body_bytes {
        return Err(ExtractError::BodyTooLarge);
    }
    if body.is_empty() {
        return Ok(BTreeSet::new());
    }
    if !content_type.is_some_and(|ct| cfg.supports(ct)) {
        return Err(ExtractError::UnsupportedContentType);
    }
    let doc: Value = serde_json::from_slice(body).map_err(|_| ExtractError::MalformedBody)?;
    let mut out = BTreeSet::new();
    let mut prefix = String::from(FieldPath::ROOT);
    walk(&doc, &mut prefix, &mut out);
    Ok(out)
}

fn walk(value: &Value, prefix: &mut String, out: &mut BTreeSet<FieldPath>) {
    let mark = prefix.len();
    match value {
        Value::Object(map) => {
            for (key, child) in map {
                write_key(prefix, key);
                out.insert(FieldPath::raw(prefix.as_str()));
                walk(child, prefix, out);
                prefix.truncate(mark);
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                return;
            }
            prefix.push_str("[*]");
            out.insert(FieldPath::raw(prefix.as_str()));
            for item in items {
                walk(item, prefix, out);
            }
            prefix.truncate(mark);
        }
        _ => {}
    }
}

/// Lowercased header names minus the deny list. Values are ignored.
pub fn extract_header_keys<'a, I, V>(headers: I, cfg: &ExtractionConfig) -> BTreeSet<String>
where
    I: IntoIterator<Item = (&'a str, V)>,
{
    headers
        .into_iter()
        .map(|(name, _)| name.to_ascii_lowercase())
        .filter(|name| !cfg.header_deny_list.contains(name))
        .collect()
}

/// Structure of one message, ready to be stamped into records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageSummary {
    pub header_keys: BTreeSet<String>,
    pub payload_paths: BTreeSet<FieldPath>,
    pub payload_bytes: u64,
    pub anomaly: Option<Anomaly>,
}

pub fn summarize_message<'a, I, V>(body: &[u8], headers: I, cfg: &ExtractionConfig) -> MessageSummary
where
    I: IntoIterator<Item = (&'a str, V)> + Clone,
    V: AsRef<[u8]>,
{
    let content_type = headers
        .clone()
        .into_iter()
        .find(|(name, _)| name.eq_ignore_ascii_case("content-type"))
        .and_then(|(_, v)| std::str::from_utf8(v.as_ref()).ok().map(str::to_owned));
    let (payload_paths, anomaly) = match extract_paths(body, content_type.as_deref(), cfg) {
        Ok(paths) => (paths, None),
        Err(e) => (BTreeSet::new(), Some(e.into())),
    };
    MessageSummary {
        header_keys: extract_header_keys(headers, cfg),
        payload_paths,
        payload_bytes: body.len() as u64,
        anomaly,
    }
}

/// What an interceptor knows about an exchange before looking at bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeContext {
    pub request_id: String,
    pub http: HttpMeta,
    pub endpoint: EndpointId,
    pub client_service: Option<String>,
}

impl ExchangeContext {
    pub fn record(&self, phase: Phase, side: Side, now: i64, summary: &MessageSummary) -> TrafficRecord {
        TrafficRecord {
            request_id: self.request_id.clone(),
            phase,
            side,
            timestamp: now,
            http: self.http.clone(),
            endpoint: self.endpoint.clone(),
            client_service: self.client_service.clone(),
            header_keys: summary.header_keys.clone(),
            payload_paths: summary.payload_paths.clone(),
            payload_bytes: summary.payload_bytes,
            anomaly: summary.anomaly,
        }
    }
}

/// Builds the record for one stage. Extraction failures never abort: the
/// record carries an empty path set and the anomaly is returned alongside.
pub fn build_record<'a, I, V>(
    ctx: &ExchangeContext,
    phase: Phase,
    side: Side,
    now: i64,
    body: &[u8],
    headers: I,
    cfg: &ExtractionConfig,
) -> (TrafficRecord, Option<Anomaly>)
where
    I: IntoIterator<Item = (&'a str, V)> + Clone,
    V: AsRef<[u8]>,
{
    let summary = summarize_message(body, headers, cfg);
    (ctx.record(phase, side, now, &summary), summary.anomaly)
}
