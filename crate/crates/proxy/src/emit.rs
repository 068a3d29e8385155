//! Bounded, non-blocking record buffer and its background sender.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use hawk_collector::{Backoff, CollectorClient};
use hawk_core::TrafficRecord;
use serde::Serialize;
use tokio::sync::{watch, Notify};
use tracing::{debug, warn};

pub const SEND_BATCH: usize = 1000;

/// Sender retry schedule toward the collector.
pub const SENDER_BACKOFF: Backoff =
    Backoff { base: Duration::from_millis(100), factor: 2, cap: Duration::from_secs(10) };

/// `emitted == delivered + buffered + dropped` at every instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EmitStats {
    pub emitted: u64,
    pub dropped: u64,
    pub anomalies: u64,
    pub delivered: u64,
    pub buffered: u64,
}

struct Queue {
    items: VecDeque<(u64, TrafficRecord)>,
    next_seq: u64,
}

pub struct Emitter {
    capacity: usize,
    queue: Mutex<Queue>,
    notify: Notify,
    emitted: AtomicU64,
    dropped: AtomicU64,
    anomalies: AtomicU64,
    delivered: AtomicU64,
}

impl Emitter {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "emit buffer capacity must be positive");
        Emitter {
            capacity,
            queue: Mutex::new(Queue { items: VecDeque::with_capacity(capacity.min(65_536)), next_seq: 0 }),
            notify: Notify::new(),
            emitted: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            anomalies: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
        }
    }

    /// Enqueues without waiting. When the buffer is full the oldest record
    /// is evicted to make room, `dropped` grows and `false` is returned.
    pub fn emit(&self, record: TrafficRecord) -> bool {
        if record.anomaly.is_some() {
            self.anomalies.fetch_add(1, Ordering::Relaxed);
        }
        let accepted = {
            let mut q = self.queue.lock().unwrap();
            let seq = q.next_seq;
            q.next_seq += 1;
            self.emitted.fetch_add(1, Ordering::Relaxed);
            let full = q.items.len() >= self.capacity;
            if full {
                q.items.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            q.items.push_back((seq, record));
            !full
        };
        self.notify.notify_one();
        accepted
    }

    pub fn stats(&self) -> EmitStats {
        // the lock orders buffered against the counters it moves between
        let q = self.queue.lock().unwrap();
        EmitStats {
            emitted: self.emitted.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            anomalies: self.anomalies.load(Ordering::Relaxed),
            delivered: self.delivered.load(Ordering::Relaxed),
            buffered: q.items.len() as u64,
        }
    }

    fn peek(&self, max: usize) -> Option<(u64, Vec<TrafficRecord>)> {
        let q = self.queue.lock().unwrap();
        let batch: Vec<_> = q.items.iter().take(max).collect();
        let last = batch.last()?.0;
        Some((last, batch.into_iter().map(|(_, r)| r.clone()).collect()))
    }

    /// Removes what is still buffered up to `last`. Records evicted while
    /// the batch was in flight were already counted as dropped.
    fn settle(&self, last: u64, delivered: bool) {
        let mut q = self.queue.lock().unwrap();
        let mut n = 0;
        while q.items.front().is_some_and(|(seq, _)| *seq <= last) {
            q.items.pop_front();
            n += 1;
        }
        let counter = if delivered { &self.delivered } else { &self.dropped };
        counter.fetch_add(n, Ordering::Relaxed);
    }

    /// Sends a single batch; `Ok(false)` when the buffer is empty.
    async fn send_once(&self, client: &CollectorClient) -> Result<bool, hawk_collector::ClientError> {
        let Some((last, batch)) = self.peek(SEND_BATCH) else { return Ok(false) };
        match client.send(&batch).await {
            Ok(_) => {
                debug!(n = batch.len(), "records delivered");
                self.settle(last, true);
                Ok(true)
            }
            Err(e) if e.is_retriable() => Err(e),
            Err(e) => {
                // 400 means the collector kept the batch as dead letters;
                // anything else is a refusal we cannot fix by resending
                let kept = matches!(e, hawk_collector::ClientError::Status { status: 400, .. });
                warn!(error = %e, kept, "collector refused batch");
                self.settle(last, kept);
                Ok(true)
            }
        }
    }

    /// Drains the buffer toward the collector until `stop` flips, then
    /// makes one last delivery attempt for whatever is left.
    pub async fn run_sender(&self, client: CollectorClient, backoff: Backoff, mut stop: watch::Receiver<bool>) {
        let mut attempt = 0u32;
        loop {
            if *stop.borrow() {
                break;
            }
            match self.send_once(&client).await {
                Ok(true) => attempt = 0,
                Ok(false) => {
                    tokio::select! {
                        _ = self.notify.notified() => {}
                        _ = tokio::time::sleep(Duration::from_millis(100)) => {}
                        _ = stop.changed() => {}
                    }
                }
                Err(e) => {
                    let delay = backoff.delay(attempt);
                    debug!(error = %e, ?delay, "collector unavailable");
                    attempt = attempt.saturating_add(1);
                    tokio::select! {
                        _ = tokio::time::sleep(delay) => {}
                        _ = stop.changed() => {}
                    }
                }
            }
        }
        while let Ok(true) = self.send_once(&client).await {}
    }
}
