//! The analysis loop: observe, decide, shift traffic, repeat.

use std::future::Future;
use std::time::Duration;

use serde_json::json;
use tracing::{info, warn};

use crate::canary::{canary_tick, CanaryConfig, CanaryPhase, CanaryState, EventKind, MetricSnapshot, ThresholdRule};
use crate::source::SourceError;

pub trait MetricSource {
    /// Called once before the first interval, e.g. to take a counter baseline.
    fn start(&mut self, _now: i64) -> impl Future<Output = Result<(), SourceError>> + Send {
        async { Ok(()) }
    }

    fn snapshot(
        &mut self,
        rules: &[ThresholdRule],
        now: i64,
    ) -> impl Future<Output = Result<MetricSnapshot, SourceError>> + Send;
}

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

pub trait TrafficSplitter {
    /// Routes `canary_percent` of traffic to the new version.
    fn set_canary_weight(&mut self, canary_percent: u32) -> impl Future<Output = Result<(), BoxError>> + Send;
}

pub trait AnalysisClock {
    /// Milliseconds on this clock's timeline.
    fn now(&self) -> i64;

    /// Lets one observation interval pass.
    fn wait(&mut self, interval: Duration) -> impl Future<Output = ()> + Send;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl AnalysisClock for SystemClock {
    fn now(&self) -> i64 {
        hawk_core::now_millis()
    }

    async fn wait(&mut self, interval: Duration) {
        tokio::time::sleep(interval).await;
    }
}

/// Deterministic timeline that advances by exactly the requested interval.
#[derive(Debug, Default, Clone, Copy)]
pub struct VirtualClock {
    pub now_ms: i64,
}

impl AnalysisClock for VirtualClock {
    fn now(&self) -> i64 {
        self.now_ms
    }

    async fn wait(&mut self, interval: Duration) {
        self.now_ms += interval.as_millis() as i64;
    }
}

/// Drives one canary to a terminal state.
///
/// Each iteration waits one interval at the current weight, takes a metric
/// snapshot, applies [`canary_tick`] and pushes the resulting weight to the
/// splitter. Promotion routes 100% to the new version, rollback 0%.
pub async fn run_analysis<M, T, C>(
    config: &CanaryConfig,
    source: &mut M,
    splitter: &mut T,
    clock: &mut C,
) -> CanaryState
where
    M: MetricSource,
    T: TrafficSplitter,
    C: AnalysisClock,
{
    let mut state = CanaryState::new();
    let start = clock.now();
    if let Err(e) = source.start(start).await {
        warn!(error = %e, "metric baseline unavailable");
    }
    state.log(start, EventKind::Deploy, Vec::new(), MetricSnapshot::default());
    let interval = Duration::from_secs(config.interval_seconds);

    while !state.is_terminal() {
        clock.wait(interval).await;
        let now = clock.now();
        let snapshot = match source.snapshot(&config.rules, now).await {
            Ok(s) => s,
            Err(e) => {
                warn!(error = %e, "metric source unreachable, counting as breach");
                MetricSnapshot::unavailable(e.to_string())
            }
        };
        state = canary_tick(&state, config, &snapshot, now);
        let weight = match state.phase {
            CanaryPhase::Promoted => 100,
            CanaryPhase::RolledBack => 0,
            _ => state.current_weight_percent,
        };
        if let Err(e) = splitter.set_canary_weight(weight).await {
            warn!(error = %e, weight, "traffic splitter rejected weight");
        }
        info!(iteration = state.iteration, phase = ?state.phase, weight, "canary tick");
    }
    state
}

/// Client for a splitter exposing `POST /control/weight {canaryPercent}`.
#[derive(Debug, Clone)]
pub struct HttpSplitter {
    client: reqwest::Client,
    control_url: String,
}

impl HttpSplitter {
    pub fn new(base_url: &str) -> Self {
        HttpSplitter {
            client: reqwest::Client::new(),
            control_url: format!("{}/control/weight", base_url.trim_end_matches('/')),
        }
    }
}

impl TrafficSplitter for HttpSplitter {
    async fn set_canary_weight(&mut self, canary_percent: u32) -> Result<(), BoxError> {
        self.client
            .post(&self.control_url)
            .json(&json!({ "canaryPercent": canary_percent }))
            .send()
            .await?
            .error_for_status()?;
        Ok(())
    }
}
