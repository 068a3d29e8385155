//! Sender side of the ingest API, shared by the proxy and library users.

use std::time::Duration;

use hawk_core::TrafficRecord;
use thiserror::Error;

use crate::ingest::IngestReport;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("collector unreachable: {0}")]
    Unreachable(String),
    #[error("collector returned {status}: {body}")]
    Status { status: u16, body: String },
}

impl ClientError {
    /// Server-side trouble or no connection; the batch may be resent.
    pub fn is_retriable(&self) -> bool {
        match self {
            ClientError::Unreachable(_) => true,
            ClientError::Status { status, .. } => *status >= 500 || *status == 429,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectorClient {
    http: reqwest::Client,
    url: String,
    source: String,
}

impl CollectorClient {
    /// `source` identifies this sender in dead-letter entries.
    pub fn new(collector_base_url: &str, source: &str) -> Self {
        CollectorClient {
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(5))
                .connect_timeout(Duration::from_millis(500))
                .build()
                .expect("http client"),
            url: format!("{}/v1/records", collector_base_url.trim_end_matches('/')),
            source: source.to_owned(),
        }
    }

    pub async fn send(&self, records: &[TrafficRecord]) -> Result<IngestReport, ClientError> {
        self.send_raw(serde_json::to_vec(records).expect("record serialization")).await
    }

    /// Posts an arbitrary body; used to exercise validation paths.
    pub async fn send_raw(&self, body: Vec<u8>) -> Result<IngestReport, ClientError> {
        let resp = self
            .http
            .post(&self.url)
            .header("content-type", "application/json")
            .header(crate::api::SOURCE_HEADER, &self.source)
            .body(body)
            .send()
            .await
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Status { status: status.as_u16(), body: resp.text().await.unwrap_or_default() });
        }
        resp.json().await.map_err(|e| ClientError::Unreachable(e.to_string()))
    }
}
