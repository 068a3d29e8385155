//! Metric source reading the registry's `/metrics` and `/v1/unmapped`.

use thiserror::Error;

use crate::analysis::MetricSource;
use crate::canary::{MetricQuery, MetricSnapshot, ThresholdRule};
use crate::exposition::{parse_text, Sample};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("metric source unreachable: {0}")]
    Unreachable(String),
    #[error("unparseable metrics: {0}")]
    Parse(String),
}

impl From<reqwest::Error> for SourceError {
    fn from(e: reqwest::Error) -> Self {
        SourceError::Unreachable(e.to_string())
    }
}

/// Scrapes the registry and turns counters into windowed per-second rates.
///
/// Every scrape is kept with the analysis clock's timestamp; a rate over a
/// window compares against the newest scrape at least `window` old, or the
/// oldest scrape when less time has elapsed.
pub struct HttpMetricSource {
    client: reqwest::Client,
    base_url: String,
    history: Vec<(i64, Vec<Sample>)>,
}

impl HttpMetricSource {
    pub fn new(registry_base_url: &str) -> Self {
        HttpMetricSource {
            client: reqwest::Client::new(),
            base_url: registry_base_url.trim_end_matches('/').to_owned(),
            history: Vec::new(),
        }
    }

    async fn scrape(&self) -> Result<Vec<Sample>, SourceError> {
        let text = self
            .client
            .get(format!("{}/metrics", self.base_url))
            .send()
            .await?
            .error_for_status()?
            .text()
            .await?;
        parse_text(&text).map_err(SourceError::Parse)
    }

    async fn unmapped_count(&self) -> Result<usize, SourceError> {
        let rows: Vec<serde_json::Value> = self
            .client
            .get(format!("{}/v1/unmapped", self.base_url))
            .send()
            .await?
            .error_for_status()?
            .json()
            .await?;
        Ok(rows.len())
    }

    fn rate(&self, query: &MetricQuery, window_seconds: u64, now: i64) -> Option<f64> {
        let selector = query.selector()?;
        let (_, current) = self.history.last()?;
        let cutoff = now - (window_seconds as i64) * 1000;
        let (then, past) = self
            .history
            .iter()
            .rev()
            .find(|(t, _)| *t <= cutoff)
            .or_else(|| self.history.first())?;
        let elapsed = (now - then) as f64 / 1000.0;
        if elapsed <= 0.0 {
            return None;
        }
        let delta = selector.sum(current).unwrap_or(0.0) - selector.sum(past).unwrap_or(0.0);
        // counter reset: fall back to the current value
        let delta = if delta < 0.0 { selector.sum(current).unwrap_or(0.0) } else { delta };
        Some(delta / elapsed)
    }
}

impl MetricSource for HttpMetricSource {
    async fn start(&mut self, now: i64) -> Result<(), SourceError> {
        let samples = self.scrape().await?;
        self.history.push((now, samples));
        Ok(())
    }

    async fn snapshot(&mut self, rules: &[ThresholdRule], now: i64) -> Result<MetricSnapshot, SourceError> {
        let samples = self.scrape().await?;
        self.history.push((now, samples));
        let mut snapshot = MetricSnapshot::default();
        for rule in rules {
            let q = &rule.metric_query;
            let value = match q {
                MetricQuery::UnmappedFields => Some(self.unmapped_count().await? as f64),
                _ => self.rate(q, rule.window_seconds, now),
            };
            if let Some(v) = value {
                snapshot.values.insert(q.key(), v);
            }
        }
        Ok(snapshot)
    }
}
