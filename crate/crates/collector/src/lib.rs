//! Ingest endpoint between proxies and the registry.
//!
//! Batches are validated record by record. Invalid input is kept verbatim
//! in an append-only dead-letter log; valid records are synced to a local
//! spool before the sender is acknowledged and then forwarded to the
//! registry at least once.

pub mod api;
pub mod client;
pub mod config;
pub mod deadletter;
pub mod forward;
pub mod ingest;
pub mod spool;

pub use api::{router, serve, SOURCE_HEADER};
pub use client::{ClientError, CollectorClient};
pub use config::CollectorConfig;
pub use deadletter::{DeadLetter, DeadLetterStore, Page};
pub use forward::{run_forwarder, Backoff, ForwardConfig, DeliveryError, HttpSink, Sink};
pub use ingest::{Collector, IngestError, IngestReport, IngestTotals, Ingested, MAX_BATCH_RECORDS, MAX_BODY_BYTES};
pub use spool::{Pending, Spool};
