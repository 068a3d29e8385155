//! Background delivery of spooled records to the registry.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use hawk_core::TrafficRecord;
use thiserror::Error;
use tokio::sync::watch;
use tracing::{debug, warn};

use crate::deadletter::DeadLetter;
use crate::ingest::{Collector, MAX_BATCH_RECORDS};

#[derive(Debug, Error)]
pub enum DeliveryError {
    /// Worth retrying: network failure, 5xx.
    #[error("retriable: {0}")]
    Retriable(String),
    /// The receiver refused the batch for good.
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Where forwarded batches go.
pub trait Sink: Send + Sync + 'static {
    fn deliver(&self, records: &[TrafficRecord]) -> impl Future<Output = Result<(), DeliveryError>> + Send;
}

/// Posts batches to a registry's `POST /v1/records`.
#[derive(Debug, Clone)]
pub struct HttpSink {
    client: reqwest::Client,
    url: String,
}

impl HttpSink {
    pub fn new(registry_base_url: &str) -> Self {
        HttpSink {
            client: reqwest::Client::builder().timeout(Duration::from_secs(10)).build().expect("http client"),
            url: format!("{}/v1/records", registry_base_url.trim_end_matches('/')),
        }
    }
}

impl Sink for HttpSink {
    async fn deliver(&self, records: &[TrafficRecord]) -> Result<(), DeliveryError> {
        let resp = self
            .client
            .post(&self.url)
            .json(records)
            .send()
            .await
            .map_err(|e| DeliveryError::Retriable(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else if status.is_client_error() && status.as_u16() != 429 {
            Err(DeliveryError::Rejected(format!("{status}: {}", resp.text().await.unwrap_or_default())))
        } else {
            Err(DeliveryError::Retriable(status.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub base: Duration,
    pub factor: u32,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(100), factor: 2, cap: Duration::from_secs(5) }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mult = self.factor.saturating_pow(attempt.min(16));
        self.base.saturating_mul(mult).min(self.cap)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardConfig {
    pub batch_size: usize,
    pub backoff: Backoff,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { batch_size: MAX_BATCH_RECORDS, backoff: Backoff::default() }
    }
}

/// Drains the spool until `stop` flips to true. Each batch is committed only
/// after the sink accepted it, so a crash anywhere replays, never loses.
pub async fn run_forwarder<S: Sink>(
    collector: Arc<Collector>,
    sink: S,
    config: ForwardConfig,
    mut stop: watch::Receiver<bool>,
) {
    let backoff = config.backoff;
    let mut attempt = 0u32;
    loop {
        if *stop.borrow() {
            return;
        }
        let pending = match collector.spool.pending(config.batch_size.max(1)) {
            Ok(p) => p,
            Err(e) => {
                warn!(error = %e, "spool read failed");
                sleep_or_stop(backoff.delay(attempt), &mut stop).await;
                attempt += 1;
                continue;
            }
        };
        if pending.records.is_empty() {
            if pending.end_offset > 0 {
                let _ = collector.spool.commit(pending.end_offset);
            }
            tokio::select! {
                _ = collector.spool.appended() => {}
                _ = tokio::time::sleep(Duration::from_millis(200)) => {}
                _ = stop.changed() => {}
            }
            continue;
        }
        match sink.deliver(&pending.records).await {
            Ok(()) => {
                attempt = 0;
                debug!(n = pending.records.len(), "forwarded");
                if let Err(e) = collector.spool.commit(pending.end_offset) {
                    warn!(error = %e, "spool commit failed, batch will be redelivered");
                }
            }
            Err(DeliveryError::Rejected(reason)) => {
                warn!(%reason, "registry rejected batch, moving it to dead letters");
                let now = hawk_core::now_millis();
                let letters = pending
                    .records
                    .iter()
                    .map(|r| DeadLetter {
                        raw_payload: r.to_json().into_bytes(),
                        violations: vec!["REJECTED_BY_CORE".into()],
                        received_at: now,
                        source: "forwarder".into(),
                    })
                    .collect();
                if collector.dead_letters.append(letters).is_ok() {
                    let _ = collector.spool.commit(pending.end_offset);
                }
            }
            Err(DeliveryError::Retriable(reason)) => {
                let delay = backoff.delay(attempt);
                warn!(%reason, ?delay, "registry unavailable, retrying");
                sleep_or_stop(delay, &mut stop).await;
                attempt += 1;
            }
        }
    }
}

async fn sleep_or_stop(delay: Duration, stop: &mut watch::Receiver<bool>) {
    tokio::select! {
        _ = tokio::time::sleep(delay) => {}
        _ = stop.changed() => {}
    }
}
