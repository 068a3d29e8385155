use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted for dynamic path segments.
pub const DYNAMIC_SEGMENT: &str = "{*}";

/// Identity of an API endpoint, independent of the concrete ids in its URL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointId {
    pub service: String,
    pub method: String,
    pub path_pattern: String,
}

impl EndpointId {
    pub fn new(
        service: impl Into<String>,
        method: impl Into<String>,
        path_pattern: impl Into<String>,
    ) -> Self {
        Self {
            service: service.into(),
            method: method.into(),
            path_pattern: path_pattern.into(),
        }
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.service, self.method, self.path_pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("MALFORMED_PATH: {0:?}")]
    MalformedPath(String),
    #[error("invalid pattern rule {0:?}: {1}")]
    BadRule(String, String),
}

/// A rule deciding whether a path segment is dynamic.
#[derive(Debug, Clone)]
pub enum PatternRule {
    /// Decimal integers, e.g. `/orders/42`.
    Integer,
    /// UUID-shaped segments (8-4-4-4-12 hex digits).
    Uuid,
    /// Any segment fully matched by the expression.
    Regex(Regex),
}

impl PatternRule {
    pub fn defaults() -> Vec<PatternRule> {
        vec![PatternRule::Integer, PatternRule::Uuid]
    }

    /// Parses the config spelling: `int`, `uuid` or `re:<expression>`.
    pub fn parse(spec: &str) -> Result<PatternRule, EndpointError> {
        match spec {
            "int" | "integer" => Ok(PatternRule::Integer),
            "uuid" => Ok(PatternRule::Uuid),
            other => match other.strip_prefix("re:") {
                Some(expr) => Regex::new(&format!("^(?:{expr})$"))
                    .map(PatternRule::Regex)
                    .map_err(|e| EndpointError::BadRule(spec.to_owned(), e.to_string())),
                None => Err(EndpointError::BadRule(spec.to_owned(), "unknown rule".into())),
            },
        }
    }

    pub fn matches(&self, segment: &str) -> bool {
        match self {
            PatternRule::Integer => !segment.is_empty() && segment.bytes().all(|b| b.is_ascii_digit()),
            PatternRule::Uuid => is_uuid(segment),
            PatternRule::Regex(re) => re.is_match(segment),
        }
    }
}

fn is_uuid(segment: &str) -> bool {
    let b = segment.as_bytes();
    b.len() == 36
        && b.iter().enumerate().all(|(i, c)| match i {
            8 | 13 | 18 | 23 => *c == b'-',
            _ => c.is_ascii_hexdigit(),
        })
}

/// Strips the query string and fragment from an origin-form target.
pub fn strip_query(raw: &str) -> &str {
    raw.split(['?', '#']).next().unwrap_or("")
}

pub fn normalize_endpoint(
    service: &str,
    method: &str,
    raw_path: &str,
    rules: &[PatternRule],
) -> Result<EndpointId, EndpointError> {
    let path = strip_query(raw_path);
    if !path.starts_with('/') || path.chars().any(|c| c.is_control() || c.is_whitespace()) {
        return Err(EndpointError::MalformedPath(raw_path.to_owned()));
    }
    let pattern = path
        .split('/')
        .map(|seg| {
            if rules.iter().any(|r| r.matches(seg)) {
                DYNAMIC_SEGMENT
            } else {
                seg
            }
        })
        .collect::<Vec<_>>()
        .join("/");
    Ok(EndpointId::new(service, method.to_ascii_uppercase(), pattern))
}
