//! Canary state machine.
//!
//! [`canary_tick`] is a pure transition function: given the current state,
//! the configuration and one metric snapshot it returns the next state. All
//! timing and I/O lives in [`crate::analysis`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposition::Selector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricQuery {
    /// Current number of observed fields without a definition.
    UnmappedFields,
    /// Per-second increase of non-EU classified exchanges.
    ThirdCountryRate,
    /// Per-second increase of purpose-limitation violations.
    PurposeViolationsRate,
    /// Per-second increase of an arbitrary label-filtered counter.
    CounterRate(String),
}

impl MetricQuery {
    pub fn key(&self) -> String {
        self.to_string()
    }

    pub fn is_rate(&self) -> bool {
        !matches!(self, MetricQuery::UnmappedFields)
    }

    /// Counter selector backing a rate query.
    pub fn selector(&self) -> Option<Selector> {
        match self {
            MetricQuery::UnmappedFields => None,
            MetricQuery::ThirdCountryRate => {
                Selector::parse(r#"hawk_third_country_requests_total{class="NON_EU"}"#).ok()
            }
            MetricQuery::PurposeViolationsRate => Selector::parse("hawk_purpose_violations_total").ok(),
            MetricQuery::CounterRate(s) => Selector::parse(s).ok(),
        }
    }
}

impl fmt::Display for MetricQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricQuery::UnmappedFields => f.write_str("UNMAPPED_FIELDS"),
            MetricQuery::ThirdCountryRate => f.write_str("THIRD_COUNTRY_RATE"),
            MetricQuery::PurposeViolationsRate => f.write_str("PURPOSE_VIOLATIONS_RATE"),
            MetricQuery::CounterRate(s) => f.write_str(s),
        }
    }
}

impl FromStr for MetricQuery {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "UNMAPPED_FIELDS" => MetricQuery::UnmappedFields,
            "THIRD_COUNTRY_RATE" => MetricQuery::ThirdCountryRate,
            "PURPOSE_VIOLATIONS_RATE" => MetricQuery::PurposeViolationsRate,
            other => {
                Selector::parse(other)?;
                MetricQuery::CounterRate(other.to_owned())
            }
        })
    }
}

impl Serialize for MetricQuery {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricQuery {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThresholdRule {
    pub metric_query: MetricQuery,
    pub comparator: Comparator,
    pub bound: f64,
    #[serde(default = "default_window")]
    pub window_seconds: u64,
}

fn default_window() -> u64 {
    60
}

impl ThresholdRule {
    /// A missing value is a breach.
    pub fn passes(&self, snapshot: &MetricSnapshot) -> bool {
        snapshot
            .values
            .get(&self.metric_query.key())
            .is_some_and(|v| v.is_finite() && self.comparator.holds(*v, self.bound))
    }

    fn describe(&self) -> String {
        format!("{} {:?} {}", self.metric_query, self.comparator, self.bound).to_uppercase()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CanaryConfig {
    pub step_weight_percent: u32,
    pub max_weight_percent: u32,
    pub interval_seconds: u64,
    pub failure_threshold: u32,
    pub rules: Vec<ThresholdRule>,
}

impl Default for CanaryConfig {
    fn default() -> Self {
        Self {
            step_weight_percent: 10,
            max_weight_percent: 50,
            interval_seconds: 30,
            failure_threshold: 3,
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("weights must satisfy 0 < step ({step}) <= max ({max}) <= 100")]
    Weights { step: u32, max: u32 },
    #[error("failureThreshold must be at least 1")]
    FailureThreshold,
    #[error("at least one rule is required")]
    NoRules,
    #[error("intervalSeconds must be positive")]
    Interval,
}

impl CanaryConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (step, max) = (self.step_weight_percent, self.max_weight_percent);
        if step == 0 || step > max || max > 100 {
            return Err(ConfigError::Weights { step, max });
        }
        if self.failure_threshold == 0 {
            return Err(ConfigError::FailureThreshold);
        }
        if self.rules.is_empty() {
            return Err(ConfigError::NoRules);
        }
        if self.interval_seconds == 0 {
            return Err(ConfigError::Interval);
        }
        Ok(())
    }
}

/// Values observed for each rule's query, keyed by [`MetricQuery::key`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricSnapshot {
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricSnapshot {
    pub fn with(mut self, query: &MetricQuery, value: f64) -> Self {
        self.values.insert(query.key(), value);
        self
    }

    pub fn unavailable(reason: impl Into<String>) -> Self {
        MetricSnapshot { values: BTreeMap::new(), error: Some(reason.into()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CanaryPhase {
    Deploying,
    Shifting,
    Observing,
    Promoted,
    RolledBack,
}

impl CanaryPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, CanaryPhase::Promoted | CanaryPhase::RolledBack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Deploy,
    Advance,
    Hold,
    Promote,
    Rollback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionEvent {
    pub timestamp: i64,
    pub iteration: u32,
    pub event: EventKind,
    pub phase: CanaryPhase,
    pub weight_percent: u32,
    pub consecutive_failures: u32,
    pub breached: Vec<String>,
    pub snapshot: MetricSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CanaryState {
    pub phase: CanaryPhase,
    pub current_weight_percent: u32,
    pub consecutive_failures: u32,
    pub iteration: u32,
    pub decision_log: Vec<DecisionEvent>,
}

impl Default for CanaryState {
    fn default() -> Self {
        Self::new()
    }
}

impl CanaryState {
    pub fn new() -> Self {
        CanaryState {
            phase: CanaryPhase::Deploying,
            current_weight_percent: 0,
            consecutive_failures: 0,
            iteration: 0,
            decision_log: Vec::new(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }

    pub fn log(&mut self, timestamp: i64, event: EventKind, breached: Vec<String>, snapshot: MetricSnapshot) {
        self.decision_log.push(DecisionEvent {
            timestamp,
            iteration: self.iteration,
            event,
            phase: self.phase,
            weight_percent: self.current_weight_percent,
            consecutive_failures: self.consecutive_failures,
            breached,
            snapshot,
        });
    }

    /// Decision log as newline-delimited JSON.
    pub fn decision_log_ndjson(&self) -> String {
        self.decision_log
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serialization") + "\n")
            .collect()
    }
}

pub fn canary_tick(state: &CanaryState, config: &CanaryConfig, snapshot: &MetricSnapshot, now: i64) -> CanaryState {
    let mut next = state.clone();
    if state.is_terminal() {
        return next;
    }
    next.iteration += 1;
    let breached: Vec<String> = config
        .rules
        .iter()
        .filter(|r| !r.passes(snapshot))
        .map(ThresholdRule::describe)
        .collect();
    // an empty rule set can never pass
    let passed = breached.is_empty() && !config.rules.is_empty();

    let event = if passed {
        next.consecutive_failures = 0;
        let target = state.current_weight_percent + config.step_weight_percent;
        if target > config.max_weight_percent {
            next.phase = CanaryPhase::Promoted;
            EventKind::Promote
        } else {
            next.current_weight_percent = target;
            next.phase = CanaryPhase::Shifting;
            EventKind::Advance
        }
    } else {
        next.consecutive_failures += 1;
        if next.consecutive_failures >= config.failure_threshold {
            next.current_weight_percent = 0;
            next.phase = CanaryPhase::RolledBack;
            EventKind::Rollback
        } else {
            next.phase = CanaryPhase::Observing;
            EventKind::Hold
        }
    };
    next.log(now, event, breached, snapshot.clone());
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CanaryConfig {
        CanaryConfig {
            rules: vec![ThresholdRule {
                metric_query: MetricQuery::UnmappedFields,
                comparator: Comparator::Le,
                bound: 0.0,
                window_seconds: 60,
            }],
            ..Default::default()
        }
    }

    fn pass() -> MetricSnapshot {
        MetricSnapshot::default().with(&MetricQuery::UnmappedFields, 0.0)
    }

    fn breach() -> MetricSnapshot {
        MetricSnapshot::default().with(&MetricQuery::UnmappedFields, 1.0)
    }

    #[test]
    fn missing_value_is_a_breach() {
        let cfg = config();
        let next = canary_tick(&CanaryState::new(), &cfg, &MetricSnapshot::unavailable("down"), 0);
        assert_eq!(next.consecutive_failures, 1);
        assert_eq!(next.current_weight_percent, 0);
    }

    #[test]
    fn nan_is_a_breach() {
        let snap = MetricSnapshot::default().with(&MetricQuery::UnmappedFields, f64::NAN);
        assert_eq!(canary_tick(&CanaryState::new(), &config(), &snap, 0).consecutive_failures, 1);
    }

    #[test]
    fn terminal_states_absorb() {
        let cfg = config();
        let mut s = CanaryState::new();
        for _ in 0..3 {
            s = canary_tick(&s, &cfg, &breach(), 0);
        }
        assert_eq!(s.phase, CanaryPhase::RolledBack);
        let after = canary_tick(&s, &cfg, &pass(), 1);
        assert_eq!(after, s);
    }

    #[test]
    fn config_validation() {
        assert_eq!(config().validate(), Ok(()));
        assert_eq!(CanaryConfig::default().validate(), Err(ConfigError::NoRules));
        let bad = CanaryConfig { step_weight_percent: 60, ..config() };
        assert!(matches!(bad.validate(), Err(ConfigError::Weights { .. })));
        let bad = CanaryConfig { failure_threshold: 0, ..config() };
        assert_eq!(bad.validate(), Err(ConfigError::FailureThreshold));
    }

    #[test]
    fn config_json_shape() {
        let cfg: CanaryConfig = serde_json::from_str(
            r#"{"rules":[{"metricQuery":"THIRD_COUNTRY_RATE","comparator":"LE","bound":0}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.step_weight_percent, 10);
        assert_eq!(cfg.max_weight_percent, 50);
        assert_eq!(cfg.interval_seconds, 30);
        assert_eq!(cfg.failure_threshold, 3);
        assert_eq!(cfg.rules[0].metric_query, MetricQuery::ThirdCountryRate);
        let custom: MetricQuery = r#"hawk_exchanges_total{server="payment"}"#.parse().unwrap();
        assert!(matches!(custom, MetricQuery::CounterRate(_)));
        assert!("bad{".parse::<MetricQuery>().is_err());
    }
}
