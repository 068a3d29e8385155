use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hawk_collector::{Collector, CollectorConfig, ForwardConfig, HttpSink};
use hawk_harness::bench::{bench_overhead, BenchOptions, OverheadReport};
use hawk_harness::canary::{simulate, Scenario};
use hawk_harness::demo::{self, DemoState, DEFAULT_STATE_FILE};
use hawk_harness::deploy::{signal, DeployOptions, PortPlan};
use hawk_harness::load::{entry_shots, run_load, LoadProfile, LoadReport};
use hawk_harness::services::http_client;
use hawk_harness::Topology;
use hawk_proxy::{Proxy, ProxyConfig};
use hawk_registry::RegistryConfig;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::watch;

#[derive(Parser)]
#[command(name = "hawk", version, about = "Privacy transparency demo, load and release tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or stop the toy shop deployment.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Drive open-loop load against a running demo or any URL.
    Load(LoadArgs),
    #[command(subcommand)]
    Bench(BenchCommand),
    #[command(subcommand)]
    Canary(CanaryCommand),
    /// Run the registry on its own.
    #[command(subcommand)]
    Registry(ServeCommand),
    /// Run the collector on its own.
    #[command(subcommand)]
    Collector(ServeCommand),
    /// Run a single interception proxy.
    #[command(subcommand)]
    Proxy(ServeCommand),
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Start in the foreground; stops on Ctrl-C or `demo down`.
    Up {
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Use consecutive ports from here instead of OS-assigned ones.
        #[arg(long)]
        base_port: Option<u16>,
        #[arg(long, default_value = DEFAULT_STATE_FILE)]
        state: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Registry TOML configuration.
        #[arg(long)]
        registry_config: Option<PathBuf>,
        /// Keep records in SQLite at this path instead of memory.
        #[arg(long)]
        database: Option<PathBuf>,
        /// Append a copy of every batch sent to the collector here.
        #[arg(long)]
        emission_tap: Option<PathBuf>,
    },
    Down {
        #[arg(long, default_value = DEFAULT_STATE_FILE)]
        state: PathBuf,
    },
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    rps: f64,
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = 16)]
    clients: usize,
    #[arg(long, default_value_t = 1024)]
    payload_bytes: usize,
    /// Base URL to load; defaults to the running demo's entry proxy.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = DEFAULT_STATE_FILE)]
    state: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Latency with and without a proxy, and with the collector up or down.
    Overhead {
        #[arg(long, default_value_t = 200.0)]
        rps: f64,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value_t = 16)]
        clients: usize,
        #[arg(long, default_value_t = 1024)]
        payload_bytes: usize,
        #[arg(long, default_value_t = 5)]
        service_time_ms: u64,
        /// Duration of the collector up/down comparison; 0 skips it.
        #[arg(long, default_value_t = 20.0)]
        collector_duration: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "hawk-bench-samples.ndjson")]
        samples: PathBuf,
    },
    /// Recompute a report from its samples file and compare.
    Reparse { report: PathBuf },
}

#[derive(Subcommand)]
enum CanaryCommand {
    /// Run a canary scenario; exits 0 when promoted, 2 when rolled back.
    Simulate {
        scenario: PathBuf,
        /// Report file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Decision log as newline-delimited JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ServeCommand {
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn report<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn stop_on_ctrl_c() -> watch::Receiver<bool> {
    let (tx, rx) = watch::channel(false);
    tokio::spawn(async move {
        let _ = tokio::signal::ctrl_c().await;
        let _ = tx.send(true);
    });
    rx
}

async fn load(args: LoadArgs) -> anyhow::Result<ExitCode> {
    let profile = LoadProfile::new(args.rps, args.duration, args.clients, args.payload_bytes);
    profile.validate()?;
    let state = DemoState::read(&args.state).ok();
    let shop = Topology::default_shop();
    let (method, path, template) = match &state {
        Some(s) => (s.entry_method.clone(), s.entry_path.clone(), s.entry_body_template.clone()),
        None => {
            let e = &shop.entry;
            let t = shop.service(&e.service).and_then(|s| s.endpoint(&e.method, &e.path));
            (e.method.clone(), e.path.clone(), t.and_then(|t| t.request_body_template.clone()))
        }
    };
    let target = match (args.target, &state) {
        (Some(t), _) => t,
        (None, Some(s)) => s.endpoints.entry.clone(),
        (None, None) => anyhow::bail!("no --target and no running demo at {}", args.state.display()),
    };
    let shots = entry_shots(&target, &method, &path, template, args.payload_bytes);
    let (samples, elapsed) = run_load(&http_client(), &profile, shots).await;
    let r = LoadReport::from_samples(&target, profile, &samples, elapsed);
    report(&r, args.out.as_deref())?;
    Ok(if r.failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Demo(DemoCommand::Up {
            topology,
            base_port,
            state,
            data_dir,
            registry_config,
            database,
            emission_tap,
        }) => {
            let topology = match topology {
                Some(p) => Topology::load(&p)?,
                None => Topology::default_shop(),
            };
            let mut registry = match registry_config {
                Some(p) => RegistryConfig::load(&p)?,
                None => RegistryConfig::default(),
            };
            if database.is_some() {
                registry.database = database;
            }
            let opts = DeployOptions {
                ports: base_port.map_or(PortPlan::Ephemeral, PortPlan::Base),
                data_dir,
                registry,
                emission_tap,
                ..DeployOptions::default()
            };
            demo::up(topology, opts, &state).await?;
        }
        Command::Demo(DemoCommand::Down { state }) => demo::down(&state).await?,
        Command::Load(args) => return load(args).await,
        Command::Bench(BenchCommand::Overhead {
            rps,
            duration,
            clients,
            payload_bytes,
            service_time_ms,
            collector_duration,
            out,
            samples,
        }) => {
            let profile = LoadProfile::new(rps, duration, clients, payload_bytes);
            profile.validate()?;
            let opts = BenchOptions {
                profile,
                service_time: Duration::from_millis(service_time_ms),
                collector_profile: (collector_duration > 0.0)
                    .then(|| LoadProfile::new(rps, collector_duration, clients, payload_bytes)),
                samples_file: samples,
            };
            let r = bench_overhead(&opts).await?;
            report(&r, out.as_deref())?;
        }
        Command::Bench(BenchCommand::Reparse { report: path }) => {
            let original: OverheadReport = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let again = original.reparse()?;
            report(&again, None)?;
            if again != original {
                eprintln!("recomputed report differs from {}", path.display());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Canary(CanaryCommand::Simulate { scenario, out, log }) => {
            let scenario = Scenario::load(&scenario)?;
            let r = simulate(scenario).await?;
            if let Some(p) = log {
                std::fs::write(&p, r.decision_log_ndjson())?;
            }
            report(&r, out.as_deref())?;
            return Ok(ExitCode::from(r.exit_code() as u8));
        }
        Command::Registry(ServeCommand::Serve { config }) => {
            let cfg = match config {
                Some(p) => RegistryConfig::load(&p)?,
                None => RegistryConfig::default(),
            };
            let registry = Arc::new(hawk_registry::open(&cfg)?);
            let listener = TcpListener::bind(cfg.listen).await?;
            tracing::info!(listen = %cfg.listen, "registry serving");
            hawk_registry::serve(listener, registry, signal(stop_on_ctrl_c())).await?;
        }
        Command::Collector(ServeCommand::Serve { config }) => {
            let cfg = match config {
                Some(p) => CollectorConfig::load(&p)?,
                None => CollectorConfig::default(),
            };
            let collector = Arc::new(Collector::open(&cfg.data_dir)?);
            let listener = TcpListener::bind(cfg.listen).await?;
            let stop = stop_on_ctrl_c();
            let forwarder = tokio::spawn(hawk_collector::run_forwarder(
                collector.clone(),
                HttpSink::new(&cfg.registry_url),
                ForwardConfig::default(),
                stop.clone(),
            ));
            tracing::info!(listen = %cfg.listen, registry = %cfg.registry_url, "collector serving");
            hawk_collector::serve(listener, collector, signal(stop)).await?;
            let _ = forwarder.await;
        }
        Command::Proxy(ServeCommand::Serve { config }) => {
            let cfg = ProxyConfig::load(config.as_deref())?;
            let listener = TcpListener::bind(cfg.listen_address).await?;
            tracing::info!(listen = %cfg.listen_address, upstream = %cfg.upstream_address, "proxy serving");
            hawk_proxy::serve(listener, Arc::new(Proxy::new(cfg)?), signal(stop_on_ctrl_c())).await?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
