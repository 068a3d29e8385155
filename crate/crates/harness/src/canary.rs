//! Canary simulation: two versions of one toy service behind a seeded
//! splitter, analysed against live registry metrics on a virtual timeline.
//!
//! Traffic is sent sequentially, so the splitter's draws and therefore the
//! whole decision trace depend only on the scenario and its seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hawk_collector::Collector;
use hawk_core::{FieldAttributes, FieldDefinition};
use hawk_proxy::{Proxy, ProxyConfig, Role};
use hawk_registry::{Registry, RegistryConfig, TimeRange};
use hawk_release::{
    run_analysis, AnalysisClock, CanaryConfig, CanaryPhase, CanaryState, DecisionEvent, HttpMetricSource,
    HttpSplitter,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;
use tracing::{info, warn};

use crate::deploy::{spawn_collector, spawn_proxy, spawn_registry, spawn_router, url, PortPlan, Ports};
use crate::services::{http_client, service_router, ToyService};
use crate::splitter::{self, Splitter, SplitterStats};
use crate::topology::{concrete_path, render, EndpointSpec, ServiceSpec, TOKEN_HEADER};

/// Service under release.
pub const SERVICE: &str = "payment";
/// Name the entry proxy reports as caller.
pub const CALLER: &str = "orders";
/// The only service versions may call; reached through a client-side proxy.
pub const EXTERNAL: &str = "ext";
/// Start of the virtual timeline, milliseconds.
pub const EPOCH_MS: i64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub requests_per_interval: u32,
    /// Requests sent to the stable version before analysis; every field
    /// they reveal is labelled.
    #[serde(default = "default_warmup")]
    pub warmup_requests: u32,
    pub analysis: CanaryConfig,
    pub stable: EndpointSpec,
    pub candidate: EndpointSpec,
}

fn default_warmup() -> u32 {
    10
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid analysis config: {0}")]
    Config(#[from] hawk_release::ConfigError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.analysis.validate()?;
        if self.requests_per_interval == 0 {
            return Err(ScenarioError::Invalid("requestsPerInterval must be positive".into()));
        }
        if !self.stable.method.eq_ignore_ascii_case(&self.candidate.method) || self.stable.path != self.candidate.path {
            return Err(ScenarioError::Invalid("stable and candidate must serve the same endpoint".into()));
        }
        for c in self.stable.downstream_calls.iter().chain(&self.candidate.downstream_calls) {
            if c.service != EXTERNAL {
                return Err(ScenarioError::Invalid(format!("versions may only call {EXTERNAL:?}, not {:?}", c.service)));
            }
        }
        Ok(())
    }

    /// Stub for every external endpoint either version calls.
    fn external_spec(&self) -> ServiceSpec {
        let mut endpoints: Vec<EndpointSpec> = Vec::new();
        for c in self.stable.downstream_calls.iter().chain(&self.candidate.downstream_calls) {
            if !endpoints.iter().any(|e| e.method == c.method && e.path == c.path) {
                endpoints.push(EndpointSpec {
                    method: c.method.clone(),
                    path: c.path.clone(),
                    request_body_template: None,
                    response_body_template: None,
                    downstream_calls: Vec::new(),
                });
            }
        }
        ServiceSpec { name: EXTERNAL.into(), endpoints, service_time_ms: 0 }
    }

    fn version(&self, endpoint: &EndpointSpec) -> ServiceSpec {
        ServiceSpec { name: SERVICE.into(), endpoints: vec![endpoint.clone()], service_time_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CanaryReport {
    pub scenario: String,
    pub seed: u64,
    pub outcome: CanaryPhase,
    pub iterations: u32,
    pub final_weight_percent: u32,
    pub requests_sent: u64,
    pub records_stored: usize,
    pub splitter: SplitterStats,
    pub decision_log: Vec<DecisionEvent>,
}

impl CanaryReport {
    pub fn decision_log_ndjson(&self) -> String {
        self.decision_log
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serialization") + "\n")
            .collect()
    }

    /// 0 when promoted, 2 when rolled back.
    pub fn exit_code(&self) -> i32 {
        match self.outcome {
            CanaryPhase::Promoted => 0,
            _ => 2,
        }
    }
}

/// Sends one interval's traffic, waits until every record of it is stored,
/// then moves virtual time forward by the interval.
struct TrafficClock {
    now_ms: i64,
    http: reqwest::Client,
    entry: String,
    scenario: Arc<Scenario>,
    registry: Arc<Registry>,
    splitter: Arc<Splitter>,
    sent: u64,
}

impl TrafficClock {
    fn expected_records(&self) -> usize {
        let s = self.splitter.stats();
        let ext = s.to_stable * self.scenario.stable.downstream_calls.len() as u64
            + s.to_canary * self.scenario.candidate.downstream_calls.len() as u64;
        (4 * self.sent + 2 * ext) as usize
    }

    async fn send(&mut self, n: u32) {
        let ep = &self.scenario.stable;
        for _ in 0..n {
            self.sent += 1;
            let token = format!("t{}", self.sent);
            let method: reqwest::Method = ep.method.parse().unwrap_or(reqwest::Method::GET);
            let mut req = self
                .http
                .request(method, format!("{}{}", self.entry, concrete_path(&ep.path, self.sent)))
                .header(TOKEN_HEADER, &token);
            if let Some(t) = &ep.request_body_template {
                req = req.header("content-type", "application/json").body(render(t, &token).to_string());
            }
            match req.send().await {
                Ok(r) => {
                    let _ = r.bytes().await;
                }
                Err(e) => warn!(error = %e, "canary request failed"),
            }
        }
    }

    async fn settle(&self) {
        let want = self.expected_records();
        let start = Instant::now();
        loop {
            let have = self.registry.record_count().unwrap_or(0);
            if have >= want {
                if have > want {
                    warn!(have, want, "more records than expected");
                }
                return;
            }
            if start.elapsed() > Duration::from_secs(30) {
                warn!(have, want, "records still missing, observing anyway");
                return;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}

impl AnalysisClock for TrafficClock {
    fn now(&self) -> i64 {
        self.now_ms
    }

    async fn wait(&mut self, interval: Duration) {
        self.send(self.scenario.requests_per_interval).await;
        self.settle().await;
        self.now_ms += interval.as_millis() as i64;
    }
}

/// Labels every field seen so far, as an operator would before a release.
fn label_observed(registry: &Registry) -> anyhow::Result<usize> {
    let unmapped = registry.unmapped_fields(TimeRange::ALL)?;
    for u in &unmapped {
        let attributes = FieldAttributes {
            name: u.path.to_string(),
            description: String::new(),
            personal_data: true,
            special_category: false,
            purposes: vec!["payment-processing".into()],
            legal_basis: "contract".into(),
            recipients: Vec::new(),
            storage_period: None,
        };
        registry.upsert_field(FieldDefinition::new(u.endpoint.clone(), u.path.clone(), attributes))?;
    }
    Ok(unmapped.len())
}

pub async fn simulate(scenario: Scenario) -> anyhow::Result<CanaryReport> {
    let scenario = Arc::new(scenario);
    let mut ports = Ports::new(PortPlan::Ephemeral);
    let registry_l = ports.bind().await?;
    let collector_l = ports.bind().await?;
    let entry_l = ports.bind().await?;
    let splitter_l = ports.bind().await?;
    let v1_l = ports.bind().await?;
    let v1_proxy_l = ports.bind().await?;
    let v2_l = ports.bind().await?;
    let v2_proxy_l = ports.bind().await?;
    let ext_l = ports.bind().await?;
    let ext_proxy_l = ports.bind().await?;

    let temp = tempfile::tempdir()?;
    let (stop, stop_rx) = watch::channel(false);
    let mut tasks = Vec::new();

    let registry = Arc::new(hawk_registry::open(&RegistryConfig::default())?);
    let registry_url = url(&registry_l);
    tasks.push(spawn_registry(registry_l, registry.clone(), stop_rx.clone()));
    let collector = Arc::new(Collector::open(&temp.path().join("collector"))?);
    let collector_url = url(&collector_l);
    tasks.extend(spawn_collector(collector_l, collector, registry_url.clone(), stop_rx.clone(), None, None)?);

    let any: std::net::SocketAddr = "127.0.0.1:0".parse()?;
    let mut proxy = |l: tokio::net::TcpListener, upstream: String, service: &str, role, client: Option<&str>| {
        let mut cfg = ProxyConfig::new(any, &upstream, service, role, &collector_url);
        cfg.listen_address = l.local_addr()?;
        cfg.client_name = client.map(str::to_owned);
        tasks.push(spawn_proxy(l, Arc::new(Proxy::new(cfg)?), stop_rx.clone()));
        anyhow::Ok(())
    };
    let addr = |l: &tokio::net::TcpListener| l.local_addr().map(|a| a.to_string());

    let ext_spec = scenario.external_spec();
    let ext_proxy_url = url(&ext_proxy_l);
    proxy(ext_proxy_l, addr(&ext_l)?, EXTERNAL, Role::ClientSide, Some(SERVICE))?;
    let v1_proxy_url = url(&v1_proxy_l);
    proxy(v1_proxy_l, addr(&v1_l)?, SERVICE, Role::ServerSide, None)?;
    let v2_proxy_url = url(&v2_proxy_l);
    proxy(v2_proxy_l, addr(&v2_l)?, SERVICE, Role::ServerSide, None)?;
    let entry_url = url(&entry_l);
    proxy(entry_l, addr(&splitter_l)?, SERVICE, Role::ClientSide, Some(CALLER))?;
    drop(proxy);

    let splitter = Arc::new(Splitter::new(&v1_proxy_url, &v2_proxy_url, scenario.seed));
    let splitter_url = url(&splitter_l);
    tasks.push(spawn_router(splitter_l, splitter::router(splitter.clone()), stop_rx.clone()));

    let downstream: BTreeMap<String, String> = [(EXTERNAL.to_owned(), ext_proxy_url)].into();
    let all = vec![ext_spec.clone(), scenario.version(&scenario.stable)];
    for (l, ep) in [(v1_l, &scenario.stable), (v2_l, &scenario.candidate)] {
        let toy = ToyService::new(scenario.version(ep), downstream.clone());
        tasks.push(spawn_router(l, service_router(toy, all.clone()), stop_rx.clone()));
    }
    tasks.push(spawn_router(ext_l, service_router(ToyService::new(ext_spec.clone(), BTreeMap::new()), all), stop_rx.clone()));

    let mut clock = TrafficClock {
        now_ms: EPOCH_MS,
        http: http_client(),
        entry: entry_url,
        scenario: scenario.clone(),
        registry: registry.clone(),
        splitter: splitter.clone(),
        sent: 0,
    };
    clock.send(scenario.warmup_requests).await;
    clock.settle().await;
    let labelled = label_observed(&registry)?;
    info!(labelled, "baseline fields labelled");

    let mut source = HttpMetricSource::new(&registry_url);
    let mut driver = HttpSplitter::new(&splitter_url);
    let state: CanaryState = run_analysis(&scenario.analysis, &mut source, &mut driver, &mut clock).await;

    let report = CanaryReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        outcome: state.phase,
        iterations: state.iteration,
        final_weight_percent: splitter.stats().canary_percent,
        requests_sent: clock.sent,
        records_stored: registry.record_count()?,
        splitter: splitter.stats(),
        decision_log: state.decision_log,
    };
    let _ = stop.send(true);
    for t in tasks {
        let _ = tokio::time::timeout(Duration::from_secs(5), t).await;
    }
    Ok(report)
}
