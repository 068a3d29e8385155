//! Proxy overhead benchmark: the same load direct and through a proxy, and
//! through two proxies whose collector is up or down.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use hawk_collector::Collector;
use hawk_proxy::{Proxy, ProxyConfig, Role};
use hawk_registry::{MemoryStore, Policy, Registry};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::deploy::{spawn_collector, spawn_proxy, spawn_registry, spawn_router, url, Ports, PortPlan};
use crate::load::{padded_body, run_load, LoadProfile, Sample, Shot};
use crate::services::{echo_router, http_client};
use crate::stats::Percentiles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Group {
    Direct,
    Proxied,
    CollectorUp,
    CollectorDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupSample {
    pub group: Group,
    #[serde(flatten)]
    pub sample: Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Ratios {
    pub fn of(num: &Percentiles, den: &Percentiles) -> Self {
        let r = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
        Ratios { p50: r(num.p50, den.p50), p90: r(num.p90, den.p90), p99: r(num.p99, den.p99) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectorComparison {
    pub collector_up: Percentiles,
    pub collector_down: Percentiles,
    /// |down − up| / up at p99.
    pub p99_relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OverheadReport {
    pub profile: LoadProfile,
    pub service_time_ms: u64,
    pub direct: Percentiles,
    pub proxied: Percentiles,
    /// proxied / direct
    pub ratio: Ratios,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collector: Option<CollectorComparison>,
    pub failed: u64,
    pub samples_file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub profile: LoadProfile,
    /// Upstream work per request.
    pub service_time: Duration,
    /// Run for the collector up/down comparison; 0 skips it.
    pub collector_profile: Option<LoadProfile>,
    pub samples_file: PathBuf,
}

fn percentiles(samples: &[GroupSample], group: Group) -> Percentiles {
    Percentiles::from_micros(samples.iter().filter(|s| s.group == group && s.sample.ok).map(|s| s.sample.latency_us))
}

impl OverheadReport {
    /// Recomputes every figure from a samples file; used to check that a
    /// report can be reproduced from its raw data.
    pub fn from_samples(
        profile: LoadProfile,
        service_time_ms: u64,
        samples: &[GroupSample],
        samples_file: &Path,
    ) -> Self {
        let direct = percentiles(samples, Group::Direct);
        let proxied = percentiles(samples, Group::Proxied);
        let has_collector = samples.iter().any(|s| s.group == Group::CollectorUp);
        let collector = has_collector.then(|| {
            let up = percentiles(samples, Group::CollectorUp);
            let down = percentiles(samples, Group::CollectorDown);
            CollectorComparison {
                collector_up: up,
                collector_down: down,
                p99_relative_difference: (down.p99 - up.p99).abs() / up.p99,
            }
        });
        OverheadReport {
            profile,
            service_time_ms,
            ratio: Ratios::of(&proxied, &direct),
            direct,
            proxied,
            collector,
            failed: samples.iter().filter(|s| !s.sample.ok).count() as u64,
            samples_file: samples_file.to_owned(),
        }
    }

    pub fn reparse(&self) -> anyhow::Result<Self> {
        let samples = read_samples(&self.samples_file)?;
        Ok(Self::from_samples(self.profile, self.service_time_ms, &samples, &self.samples_file))
    }
}

pub fn write_samples(path: &Path, samples: &[GroupSample]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_samples(path: &Path) -> anyhow::Result<Vec<GroupSample>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn shots(body: Vec<u8>) -> impl Fn(u64, &str) -> Shot {
    move |_, base| Shot {
        method: reqwest::Method::POST,
        url: format!("{base}/bench/echo"),
        headers: vec![("content-type".into(), "application/json".into())],
        body: Some(body.clone()),
    }
}

fn tag(samples: Vec<Sample>, group: impl Fn(u64) -> Group) -> Vec<GroupSample> {
    samples.into_iter().map(|s| GroupSample { group: group(s.index), sample: s }).collect()
}

/// Self-contained: starts an echo upstream, a registry, a collector and
/// the proxies under test, then tears them down.
pub async fn bench_overhead(opts: &BenchOptions) -> anyhow::Result<OverheadReport> {
    opts.profile.validate()?;
    let dir = tempfile::tempdir()?;
    let (stop, stop_rx) = watch::channel(false);
    let mut ports = Ports::new(PortPlan::Ephemeral);
    let mut tasks = Vec::new();

    let upstream_l = ports.bind().await?;
    let upstream = upstream_l.local_addr()?.to_string();
    tasks.push(spawn_router(upstream_l, echo_router(opts.service_time), stop_rx.clone()));

    let registry_l = ports.bind().await?;
    let registry_url = url(&registry_l);
    let registry = Arc::new(Registry::new(Arc::new(MemoryStore::new()), Policy::default())?);
    tasks.push(spawn_registry(registry_l, registry, stop_rx.clone()));
    let collector_l = ports.bind().await?;
    let collector_url = url(&collector_l);
    let collector = Arc::new(Collector::open(dir.path())?);
    tasks.extend(spawn_collector(collector_l, collector, registry_url, stop_rx.clone(), None, None)?);

    // a port that was bound once and released: connections are refused
    let dead_collector = url(&ports.bind().await?);

    let live = launch_proxy(&upstream, &collector_url, &stop_rx, &mut tasks).await?;
    let direct_url = format!("http://{upstream}");
    let client = http_client();
    let body = padded_body(None, "", opts.profile.payload_bytes);
    let make = shots(body);

    // warm connection pools on both paths
    let warm = LoadProfile::new(200.0, 0.5, opts.profile.concurrent_clients, opts.profile.payload_bytes);
    run_load(&client, &warm, |i| make(i, &direct_url)).await;
    run_load(&client, &warm, |i| make(i, &live)).await;

    let (direct, _) = run_load(&client, &opts.profile, |i| make(i, &direct_url)).await;
    let (proxied, _) = run_load(&client, &opts.profile, |i| make(i, &live)).await;
    let mut samples = tag(direct, |_| Group::Direct);
    samples.extend(tag(proxied, |_| Group::Proxied));

    if let Some(p) = &opts.collector_profile {
        p.validate()?;
        let up = launch_proxy(&upstream, &collector_url, &stop_rx, &mut tasks).await?;
        let down = launch_proxy(&upstream, &dead_collector, &stop_rx, &mut tasks).await?;
        run_load(&client, &warm, |i| make(i, if i % 2 == 0 { &up } else { &down })).await;
        // alternate requests so both paths see the same machine conditions
        let (mixed, _) = run_load(&client, p, |i| make(i, if i % 2 == 0 { &up } else { &down })).await;
        samples.extend(tag(mixed, |i| if i % 2 == 0 { Group::CollectorUp } else { Group::CollectorDown }));
    }

    let _ = stop.send(true);
    for t in tasks {
        let _ = tokio::time::timeout(Duration::from_secs(5), t).await;
    }

    write_samples(&opts.samples_file, &samples)?;
    Ok(OverheadReport::from_samples(
        opts.profile,
        opts.service_time.as_millis() as u64,
        &samples,
        &opts.samples_file,
    ))
}

async fn launch_proxy(
    upstream: &str,
    collector: &str,
    stop: &watch::Receiver<bool>,
    tasks: &mut Vec<tokio::task::JoinHandle<()>>,
) -> anyhow::Result<String> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let cfg = ProxyConfig::new(listener.local_addr()?, upstream, "bench", Role::Both, collector);
    let proxy = Arc::new(Proxy::new(cfg)?);
    let base = url(&listener);
    tasks.push(spawn_proxy(listener, proxy, stop.clone()));
    Ok(base)
}
