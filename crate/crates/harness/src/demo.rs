//! `hawk demo up` / `hawk demo down`: a foreground deployment of the toy
//! shop plus a state file telling other commands where it listens.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;
use tracing::info;

use crate::deploy::{DeployOptions, Deployment, Endpoints};
use crate::services::http_client;
use crate::topology::Topology;

pub const DEFAULT_STATE_FILE: &str = ".hawk-demo.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DemoState {
    pub pid: u32,
    pub data_dir: PathBuf,
    pub entry_method: String,
    pub entry_path: String,
    #[serde(default)]
    pub entry_body_template: Option<serde_json::Value>,
    /// Exchanges one entry request causes.
    pub exchanges_per_request: usize,
    pub endpoints: Endpoints,
}

impl DemoState {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("no running demo ({}: {e})", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn control_router(stop: watch::Sender<bool>) -> Router {
    Router::new()
        .route("/-/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route(
            "/control/shutdown",
            post(move || {
                let _ = stop.send(true);
                async { Json(json!({"status": "stopping"})) }
            }),
        )
}

/// Runs until Ctrl-C or `POST /control/shutdown`.
pub async fn up(topology: Topology, opts: DeployOptions, state_file: &Path) -> anyhow::Result<()> {
    let (stop, mut stop_rx) = watch::channel(false);
    let entry = topology.entry.clone();
    let per_request = topology.exchanges_per_request(&entry.service, &entry.method, &entry.path);
    let template = topology
        .service(&entry.service)
        .and_then(|s| s.endpoint(&entry.method, &entry.path))
        .and_then(|e| e.request_body_template.clone());
    let d = Deployment::start(topology, opts, Some(control_router(stop))).await?;
    let state = DemoState {
        pid: std::process::id(),
        data_dir: d.data_dir.clone(),
        entry_method: entry.method,
        entry_path: entry.path,
        entry_body_template: template,
        exchanges_per_request: per_request,
        endpoints: d.endpoints.clone(),
    };
    state.write(state_file)?;
    println!("{}", serde_json::to_string(&state)?);
    info!(state = %state_file.display(), "demo up");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = stop_rx.wait_for(|s| *s) => {}
    }
    info!("demo stopping");
    d.wait_drained(Duration::from_secs(10)).await;
    d.shutdown().await;
    let _ = std::fs::remove_file(state_file);
    Ok(())
}

/// Asks a running demo to stop and waits until its control port is gone.
pub async fn down(state_file: &Path) -> anyhow::Result<()> {
    let state = DemoState::read(state_file)?;
    let control = state.endpoints.control.clone().ok_or_else(|| anyhow::anyhow!("state has no control endpoint"))?;
    let http = http_client();
    http.post(format!("{control}/control/shutdown")).send().await?.error_for_status()?;
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(30) {
        if http.get(format!("{control}/-/health")).send().await.is_err() {
            let _ = std::fs::remove_file(state_file);
            println!("{}", json!({"status": "down", "pid": state.pid}));
            return Ok(());
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    anyhow::bail!("demo (pid {}) did not stop", state.pid)
}
