//! Shared domain model for the transparency pipeline.
//!
//! Everything that travels between the proxy, the collector and the registry
//! is defined here: the value-free [`TrafficRecord`], the [`FieldPath`]
//! grammar used to name payload properties, personal-data
//! [`FieldDefinition`]s and the structural extractor that turns a message
//! body into a set of paths without ever retaining a value.

pub mod endpoint;
pub mod extract;
pub mod field;
pub mod path;
pub mod record;
pub mod validate;

pub use endpoint::{normalize_endpoint, EndpointError, EndpointId, PatternRule};
pub use extract::{
    build_record, extract_header_keys, extract_paths, summarize_message, Anomaly,
    ExchangeContext, ExtractError, ExtractionConfig, MessageSummary,
};
pub use field::{DefinitionViolation, FieldAttributes, FieldDefinition, MappingTemplate, TemplateEntry};
pub use path::{FieldPath, PathError, PathStep};
pub use record::{HttpMeta, MetricKind, Phase, RecordKey, Side, TrafficRecord, ALLOWED_METHODS, UNKNOWN_CLIENT};
pub use validate::{check_exchange_order, validate_record, Violation};

/// Current wall-clock time as UTC milliseconds since the epoch.
pub fn now_millis() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}
