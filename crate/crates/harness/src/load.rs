//! Open-loop load generator.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::stats::Percentiles;
use crate::topology::{render, TOKEN_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadProfile {
    pub requests_per_second: f64,
    pub duration_seconds: f64,
    pub concurrent_clients: usize,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
}

fn default_payload() -> usize {
    1024
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("requestsPerSecond must be positive")]
    Rate,
    #[error("durationSeconds must be positive")]
    Duration,
    #[error("concurrentClients must be positive")]
    Clients,
    #[error("payloadBytes must be positive")]
    Payload,
}

impl LoadProfile {
    pub fn new(rps: f64, duration: f64, clients: usize, payload: usize) -> Self {
        LoadProfile {
            requests_per_second: rps,
            duration_seconds: duration,
            concurrent_clients: clients,
            payload_bytes: payload,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.requests_per_second > 0.0 && self.requests_per_second.is_finite()) {
            return Err(ProfileError::Rate);
        }
        if !(self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return Err(ProfileError::Duration);
        }
        if self.concurrent_clients == 0 {
            return Err(ProfileError::Clients);
        }
        if self.payload_bytes == 0 {
            return Err(ProfileError::Payload);
        }
        Ok(())
    }

    /// Requests an exact schedule issues.
    pub fn total_requests(&self) -> u64 {
        (self.requests_per_second * self.duration_seconds).round() as u64
    }
}

/// One request to send: index → (method, url, headers, body).
#[derive(Debug, Clone)]
pub struct Shot {
    pub method: reqwest::Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Sample {
    pub index: u64,
    /// From the scheduled send time, so queueing delay counts.
    pub latency_us: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadReport {
    pub target: String,
    pub profile: LoadProfile,
    pub sent: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub elapsed_seconds: f64,
    pub latency_ms: Percentiles,
}

impl LoadReport {
    pub fn from_samples(target: &str, profile: LoadProfile, samples: &[Sample], elapsed: Duration) -> Self {
        let succeeded = samples.iter().filter(|s| s.ok).count() as u64;
        LoadReport {
            target: target.to_owned(),
            profile,
            sent: samples.len() as u64,
            succeeded,
            failed: samples.len() as u64 - succeeded,
            elapsed_seconds: elapsed.as_secs_f64(),
            latency_ms: Percentiles::from_micros(samples.iter().filter(|s| s.ok).map(|s| s.latency_us)),
        }
    }
}

/// Issues request `i` at `start + i / rps` regardless of how earlier
/// requests fare; at most `concurrent_clients` are in flight.
pub async fn run_load<F>(client: &reqwest::Client, profile: &LoadProfile, make: F) -> (Vec<Sample>, Duration)
where
    F: Fn(u64) -> Shot,
{
    let total = profile.total_requests();
    let permits = Arc::new(Semaphore::new(profile.concurrent_clients));
    let start = tokio::time::Instant::now();
    let mut tasks = Vec::with_capacity(total as usize);
    for i in 0..total {
        let at = start + Duration::from_secs_f64(i as f64 / profile.requests_per_second);
        tokio::time::sleep_until(at).await;
        let shot = make(i);
        let client = client.clone();
        let permits = permits.clone();
        let scheduled = Instant::now();
        tasks.push(tokio::spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            let mut req = client.request(shot.method, &shot.url);
            for (k, v) in &shot.headers {
                req = req.header(k, v);
            }
            if let Some(b) = shot.body {
                req = req.body(b);
            }
            let ok = match req.send().await {
                Ok(r) => {
                    let status = r.status();
                    r.bytes().await.is_ok() && status.is_success()
                }
                Err(_) => false,
            };
            Sample { index: i, latency_us: scheduled.elapsed().as_micros() as u64, ok }
        }));
    }
    let mut samples = Vec::with_capacity(tasks.len());
    for t in tasks {
        if let Ok(s) = t.await {
            samples.push(s);
        }
    }
    (samples, start.elapsed())
}

/// Renders `template` with `token` and pads it with a `note` field until
/// the JSON text is at least `bytes` long.
pub fn padded_body(template: Option<&Value>, token: &str, bytes: usize) -> Vec<u8> {
    let mut v = template.map(|t| render(t, token)).unwrap_or(Value::Object(Default::default()));
    let base = serde_json::to_vec(&v).expect("json");
    if let Value::Object(m) = &mut v {
        // `,"note":""` adds 10 bytes besides the filler
        let filler = bytes.saturating_sub(base.len() + 10);
        if filler > 0 {
            m.insert("note".into(), Value::String("x".repeat(filler)));
        }
    }
    serde_json::to_vec(&v).expect("json")
}

/// Request generator for the entry endpoint of a running demo.
pub fn entry_shots(
    entry_url: &str,
    method: &str,
    path: &str,
    template: Option<Value>,
    payload_bytes: usize,
) -> impl Fn(u64) -> Shot {
    let method: reqwest::Method = method.parse().unwrap_or(reqwest::Method::POST);
    let url = format!("{}{}", entry_url.trim_end_matches('/'), crate::topology::concrete_path(path, 1));
    move |i| {
        let token = format!("t{i:06}");
        let has_body = template.is_some();
        Shot {
            method: method.clone(),
            url: url.clone(),
            headers: {
                let mut h = vec![(TOKEN_HEADER.to_owned(), token.clone())];
                if has_body {
                    h.push(("content-type".into(), "application/json".into()));
                }
                h
            },
            body: has_body.then(|| padded_body(template.as_ref(), &token, payload_bytes)),
        }
    }
}
