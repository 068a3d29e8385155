use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use hawk_core::{validate_record, TrafficRecord, Violation};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::deadletter::{DeadLetter, DeadLetterStore};
use crate::spool::Spool;

pub const MAX_BATCH_RECORDS: usize = 1000;
pub const MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestReport {
    pub accepted: usize,
    pub dead_lettered: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestTotals {
    pub received: u64,
    pub accepted: u64,
    pub dead_lettered: u64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(usize),
    #[error("batch of {0} records exceeds the limit")]
    BatchTooLarge(usize),
    #[error("storage unavailable: {0}")]
    Storage(#[from] io::Error),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::PayloadTooLarge(_) => "PAYLOAD_TOO_LARGE",
            IngestError::BatchTooLarge(_) => "BATCH_TOO_LARGE",
            IngestError::Storage(_) => "STORAGE_UNAVAILABLE",
        }
    }
}

/// Outcome of one POST: either a per-record report, or a body that was not
/// a list at all and went to the dead-letter store whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingested {
    Batch(IngestReport),
    Malformed(IngestReport),
}

impl Ingested {
    pub fn report(self) -> IngestReport {
        match self {
            Ingested::Batch(r) | Ingested::Malformed(r) => r,
        }
    }
}

pub struct Collector {
    pub spool: Spool,
    pub dead_letters: DeadLetterStore,
    received: AtomicU64,
    accepted: AtomicU64,
    dead_lettered: AtomicU64,
}

impl Collector {
    pub fn open(data_dir: &Path) -> io::Result<Collector> {
        Ok(Collector {
            spool: Spool::open(data_dir)?,
            dead_letters: DeadLetterStore::open(data_dir)?,
            received: AtomicU64::new(0),
            accepted: AtomicU64::new(0),
            dead_lettered: AtomicU64::new(0),
        })
    }

    /// Validates every element independently. Valid records are spooled and
    /// synced before this returns, so a returned report is an acknowledgement.
    pub fn ingest(&self, body: &[u8], source: &str, received_at: i64) -> Result<Ingested, IngestError> {
        if body.len() > MAX_BODY_BYTES {
            return Err(IngestError::PayloadTooLarge(body.len()));
        }
        let letter = |raw: &[u8], violations: Vec<String>| DeadLetter {
            raw_payload: raw.to_vec(),
            violations,
            received_at,
            source: source.to_owned(),
        };
        let elements: Vec<Box<RawValue>> = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(_) => {
                self.dead_letters.append(vec![letter(body, vec![Violation::MalformedBatch.code().into()])])?;
                self.count(1, 0, 1);
                return Ok(Ingested::Malformed(IngestReport { accepted: 0, dead_lettered: 1 }));
            }
        };
        if elements.len() > MAX_BATCH_RECORDS {
            return Err(IngestError::BatchTooLarge(elements.len()));
        }
        let mut valid: Vec<TrafficRecord> = Vec::new();
        let mut invalid = Vec::new();
        for raw in &elements {
            match serde_json::from_str::<TrafficRecord>(raw.get()) {
                Err(_) => invalid.push(letter(raw.get().as_bytes(), vec![Violation::MalformedRecord.code().into()])),
                Ok(record) => {
                    let violations = validate_record(&record);
                    if violations.is_empty() {
                        valid.push(record);
                    } else {
                        invalid.push(letter(raw.get().as_bytes(), violations.iter().map(|v| v.code().into()).collect()));
                    }
                }
            }
        }
        let report = IngestReport { accepted: valid.len(), dead_lettered: invalid.len() };
        self.spool.append(&valid)?;
        self.dead_letters.append(invalid)?;
        self.count(elements.len(), report.accepted, report.dead_lettered);
        Ok(Ingested::Batch(report))
    }

    fn count(&self, received: usize, accepted: usize, dead: usize) {
        self.received.fetch_add(received as u64, Ordering::Relaxed);
        self.accepted.fetch_add(accepted as u64, Ordering::Relaxed);
        self.dead_lettered.fetch_add(dead as u64, Ordering::Relaxed);
    }

    /// Counts since this process started.
    pub fn totals(&self) -> IngestTotals {
        IngestTotals {
            received: self.received.load(Ordering::Relaxed),
            accepted: self.accepted.load(Ordering::Relaxed),
            dead_lettered: self.dead_lettered.load(Ordering::Relaxed),
        }
    }
}
