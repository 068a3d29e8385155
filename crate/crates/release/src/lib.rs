//! Release gating on privacy metrics.
//!
//! A canary is moved through weighted traffic steps while transparency
//! metrics (uncategorized fields, third-country transfers, purpose
//! violations) are checked against thresholds after every interval. Any
//! sustained breach rolls the canary back; a clean run promotes it.

pub mod analysis;
pub mod canary;
pub mod exposition;
pub mod geo;
pub mod purpose;
pub mod source;

pub use analysis::{run_analysis, AnalysisClock, HttpSplitter, MetricSource, SystemClock, TrafficSplitter, VirtualClock};
pub use canary::{
    canary_tick, CanaryConfig, CanaryPhase, CanaryState, Comparator, ConfigError, DecisionEvent,
    EventKind, MetricQuery, MetricSnapshot, ThresholdRule,
};
pub use geo::{classify_host, classify_ip, EuSet, GeoClass, GeoError, GeoTable};
pub use purpose::{evaluate_purpose_rule, PurposeRule, PurposeViolation};
pub use source::{HttpMetricSource, SourceError};
