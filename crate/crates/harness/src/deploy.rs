//! Starts registry, collector, toy services and their proxies in-process.

use std::collections::BTreeMap;
use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{Request, State};
use axum::middleware::Next;
use axum::response::Response;
use axum::Router;
use hawk_collector::{Collector, ForwardConfig, HttpSink};
use hawk_proxy::{Proxy, ProxyConfig, Role};
use hawk_registry::{Registry, RegistryConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::services::{http_client, service_router, ToyService};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("PORT_IN_USE: {0}")]
    PortInUse(SocketAddr),
    #[error("cannot bind {0}: {1}")]
    Bind(SocketAddr, std::io::Error),
    #[error("{0} did not become healthy")]
    Unhealthy(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

#[derive(Debug, Clone, Copy)]
pub enum PortPlan {
    /// OS-assigned ports.
    Ephemeral,
    /// Consecutive ports from this one, in a fixed order.
    Base(u16),
}

/// Hands out listeners according to a [`PortPlan`].
pub struct Ports {
    plan: PortPlan,
    next: u16,
}

impl Ports {
    pub fn new(plan: PortPlan) -> Self {
        let next = match plan {
            PortPlan::Ephemeral => 0,
            PortPlan::Base(b) => b,
        };
        Ports { plan, next }
    }

    pub async fn bind(&mut self) -> Result<TcpListener, DeployError> {
        let addr: SocketAddr = match self.plan {
            PortPlan::Ephemeral => "127.0.0.1:0".parse().unwrap(),
            PortPlan::Base(_) => {
                let a = SocketAddr::from(([127, 0, 0, 1], self.next));
                self.next += 1;
                a
            }
        };
        TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => DeployError::PortInUse(addr),
            _ => DeployError::Bind(addr, e),
        })
    }
}

pub fn url(l: &TcpListener) -> String {
    format!("http://{}", l.local_addr().expect("bound listener"))
}

/// Resolves once `rx` turns true.
pub fn signal(mut rx: watch::Receiver<bool>) -> impl Future<Output = ()> + Send + 'static {
    async move {
        while !*rx.borrow_and_update() {
            if rx.changed().await.is_err() {
                return;
            }
        }
    }
}

pub fn spawn_registry(listener: TcpListener, registry: Arc<Registry>, stop: watch::Receiver<bool>) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = hawk_registry::serve(listener, registry, signal(stop)).await {
            warn!(error = %e, "registry server stopped");
        }
    })
}

async fn tap(State(file): State<Arc<Mutex<std::fs::File>>>, request: Request, next: Next) -> Response {
    if request.uri().path() != "/v1/records" {
        return next.run(request).await;
    }
    let (parts, body) = request.into_parts();
    let bytes = axum::body::to_bytes(body, hawk_collector::MAX_BODY_BYTES).await.unwrap_or_default();
    {
        let mut f = file.lock().unwrap();
        let _ = f.write_all(&bytes).and_then(|_| f.write_all(b"\n"));
    }
    next.run(Request::from_parts(parts, Body::from(bytes))).await
}

/// Serves the collector's ingest API and runs its forwarder. With
/// `gate` the forwarder waits until the gate turns true; with `tap_file`
/// every ingest body is copied to that file first.
pub fn spawn_collector(
    listener: TcpListener,
    collector: Arc<Collector>,
    registry_url: String,
    stop: watch::Receiver<bool>,
    gate: Option<watch::Receiver<bool>>,
    tap_file: Option<&Path>,
) -> anyhow::Result<Vec<JoinHandle<()>>> {
    let mut app = hawk_collector::router(collector.clone());
    if let Some(path) = tap_file {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        app = app.layer(axum::middleware::from_fn_with_state(Arc::new(Mutex::new(file)), tap));
    }
    let server_stop = stop.clone();
    let server = tokio::spawn(async move {
        let svc = app.into_make_service_with_connect_info::<SocketAddr>();
        if let Err(e) = axum::serve(listener, svc).with_graceful_shutdown(signal(server_stop)).await {
            warn!(error = %e, "collector server stopped");
        }
    });
    let forwarder = tokio::spawn(async move {
        if let Some(g) = gate {
            signal(g).await;
        }
        hawk_collector::run_forwarder(collector, HttpSink::new(&registry_url), ForwardConfig::default(), stop).await;
    });
    Ok(vec![server, forwarder])
}

pub fn spawn_proxy(listener: TcpListener, proxy: Arc<Proxy>, stop: watch::Receiver<bool>) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = hawk_proxy::serve(listener, proxy, signal(stop)).await {
            warn!(error = %e, "proxy stopped");
        }
    })
}

pub fn spawn_router(listener: TcpListener, router: Router, stop: watch::Receiver<bool>) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(signal(stop)).await {
            warn!(error = %e, "server stopped");
        }
    })
}

pub struct DeployOptions {
    pub ports: PortPlan,
    /// Collector spool, dead letters and the registry database; a fresh
    /// temporary directory when unset.
    pub data_dir: Option<PathBuf>,
    /// `listen` is ignored; the registry gets a port from the plan.
    pub registry: RegistryConfig,
    /// Keep accepted records in the collector spool until
    /// [`Deployment::release_forwarding`].
    pub hold_forwarding: bool,
    /// Copy of every batch the proxies send to the collector.
    pub emission_tap: Option<PathBuf>,
    pub emit_buffer_capacity: usize,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions {
            ports: PortPlan::Ephemeral,
            data_dir: None,
            registry: RegistryConfig::default(),
            hold_forwarding: false,
            emission_tap: None,
            emit_buffer_capacity: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceUrls {
    pub service: String,
    /// Server-side proxy in front of the service.
    pub inbound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Endpoints {
    pub registry: String,
    pub collector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    /// Client-side proxy used by the entry client.
    pub entry: String,
    pub services: BTreeMap<String, ServiceUrls>,
    /// Client-side proxies keyed `caller->callee`.
    pub outbound: BTreeMap<String, String>,
}

impl Endpoints {
    /// Every URL that answers a health or stats probe.
    pub fn probes(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("registry".to_owned(), format!("{}/-/health", self.registry)),
            ("collector".to_owned(), format!("{}/-/health", self.collector)),
            ("entry proxy".to_owned(), format!("{}/-/stats", self.entry)),
        ];
        for (name, s) in &self.services {
            out.push((name.clone(), format!("{}/-/health", s.service)));
            out.push((format!("{name} inbound proxy"), format!("{}/-/stats", s.inbound)));
        }
        for (k, u) in &self.outbound {
            out.push((format!("{k} proxy"), format!("{u}/-/stats")));
        }
        out
    }
}

pub struct Deployment {
    pub topology: Topology,
    pub endpoints: Endpoints,
    pub registry: Arc<Registry>,
    pub collector: Arc<Collector>,
    pub proxies: Vec<Arc<Proxy>>,
    pub data_dir: PathBuf,
    _temp: Option<tempfile::TempDir>,
    stop: watch::Sender<bool>,
    gate: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Deployment {
    /// Binds every port first, so a busy port fails the whole start before
    /// anything runs. `control`, when given, is served on the port right
    /// after the collector's.
    pub async fn start(topology: Topology, opts: DeployOptions, control: Option<Router>) -> Result<Self, DeployError> {
        topology.validate().map_err(anyhow::Error::from)?;
        let mut ports = Ports::new(opts.ports);
        let registry_l = ports.bind().await?;
        let collector_l = ports.bind().await?;
        let control_l = match control {
            Some(_) => Some(ports.bind().await?),
            None => None,
        };
        let entry_l = ports.bind().await?;
        let mut service_ls = Vec::new();
        for s in &topology.services {
            service_ls.push((s.name.clone(), ports.bind().await?, ports.bind().await?));
        }
        let mut outbound_ls = Vec::new();
        for s in &topology.services {
            for callee in topology.callees(&s.name) {
                outbound_ls.push((s.name.clone(), callee, ports.bind().await?));
            }
        }

        let (temp, data_dir) = match opts.data_dir {
            Some(d) => {
                std::fs::create_dir_all(&d).map_err(anyhow::Error::from)?;
                (None, d)
            }
            None => {
                let t = tempfile::tempdir().map_err(anyhow::Error::from)?;
                let p = t.path().to_owned();
                (Some(t), p)
            }
        };

        let inbound_url: BTreeMap<String, String> = service_ls.iter().map(|(n, _, p)| (n.clone(), url(p))).collect();
        let endpoints = Endpoints {
            registry: url(&registry_l),
            collector: url(&collector_l),
            control: control_l.as_ref().map(url),
            entry: url(&entry_l),
            services: service_ls
                .iter()
                .map(|(n, s, p)| (n.clone(), ServiceUrls { service: url(s), inbound: url(p) }))
                .collect(),
            outbound: outbound_ls.iter().map(|(a, b, l)| (format!("{a}->{b}"), url(l))).collect(),
        };

        let (stop, stop_rx) = watch::channel(false);
        let (gate, gate_rx) = watch::channel(!opts.hold_forwarding);
        let mut tasks = Vec::new();

        let registry = Arc::new(hawk_registry::open(&opts.registry)?);
        tasks.push(spawn_registry(registry_l, registry.clone(), stop_rx.clone()));

        let collector = Arc::new(Collector::open(&data_dir.join("collector")).map_err(anyhow::Error::from)?);
        tasks.extend(spawn_collector(
            collector_l,
            collector.clone(),
            endpoints.registry.clone(),
            stop_rx.clone(),
            Some(gate_rx),
            opts.emission_tap.as_deref(),
        )?);

        if let (Some(l), Some(router)) = (control_l, control) {
            tasks.push(spawn_router(l, router, stop_rx.clone()));
        }

        let mut proxies = Vec::new();
        let mut add_proxy = |listener: TcpListener, mut cfg: ProxyConfig| -> Result<(), DeployError> {
            cfg.listen_address = listener.local_addr().map_err(anyhow::Error::from)?;
            cfg.emit_buffer_capacity = opts.emit_buffer_capacity;
            let p = Arc::new(Proxy::new(cfg)?);
            proxies.push(p.clone());
            tasks.push(spawn_proxy(listener, p, stop_rx.clone()));
            Ok(())
        };
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();

        let entry = &topology.entry;
        let mut cfg =
            ProxyConfig::new(any, &inbound_url[&entry.service], &entry.service, Role::ClientSide, &endpoints.collector);
        cfg.client_name = Some(entry.client.clone());
        add_proxy(entry_l, cfg)?;

        let mut downstream: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (caller, callee, l) in outbound_ls {
            let base = url(&l);
            let mut cfg = ProxyConfig::new(any, &inbound_url[&callee], &callee, Role::ClientSide, &endpoints.collector);
            cfg.client_name = Some(caller.clone());
            add_proxy(l, cfg)?;
            downstream.entry(caller).or_default().insert(callee, base);
        }

        let mut service_tasks = Vec::new();
        for (name, service_l, inbound_l) in service_ls {
            let spec = topology.service(&name).expect("validated").clone();
            let cfg = ProxyConfig::new(
                any,
                &service_l.local_addr().map_err(anyhow::Error::from)?.to_string(),
                &name,
                Role::ServerSide,
                &endpoints.collector,
            );
            add_proxy(inbound_l, cfg)?;
            let toy = ToyService::new(spec, downstream.remove(&name).unwrap_or_default());
            service_tasks.push(spawn_router(service_l, service_router(toy, topology.services.clone()), stop_rx.clone()));
        }
        tasks.extend(service_tasks);

        let d = Deployment {
            topology,
            endpoints,
            registry,
            collector,
            proxies,
            data_dir,
            _temp: temp,
            stop,
            gate,
            tasks,
        };
        d.wait_healthy(Duration::from_secs(10)).await?;
        info!(entry = %d.endpoints.entry, registry = %d.endpoints.registry, "deployment up");
        Ok(d)
    }

    pub async fn wait_healthy(&self, limit: Duration) -> Result<(), DeployError> {
        let http = http_client();
        let start = Instant::now();
        for (name, probe) in self.endpoints.probes() {
            loop {
                match http.get(&probe).send().await {
                    Ok(r) if r.status().is_success() => break,
                    _ if start.elapsed() > limit => return Err(DeployError::Unhealthy(name)),
                    _ => tokio::time::sleep(Duration::from_millis(20)).await,
                }
            }
        }
        Ok(())
    }

    pub fn release_forwarding(&self) {
        let _ = self.gate.send(true);
    }

    /// Polls until the registry holds at least `n` records; returns the
    /// final count.
    pub async fn wait_for_records(&self, n: usize, limit: Duration) -> usize {
        let start = Instant::now();
        loop {
            let count = self.registry.record_count().unwrap_or(0);
            if count >= n || start.elapsed() > limit {
                return count;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    /// Waits until every proxy buffer and the collector spool are empty.
    pub async fn wait_drained(&self, limit: Duration) -> bool {
        let start = Instant::now();
        while start.elapsed() < limit {
            let proxies_empty = self.proxies.iter().all(|p| p.stats().buffered == 0);
            if proxies_empty && self.collector.spool.is_drained() {
                return true;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        false
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.gate.send(true);
        for t in self.tasks {
            let _ = tokio::time::timeout(Duration::from_secs(10), t).await;
        }
    }
}
