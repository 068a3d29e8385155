//! Central registry: stores value-free traffic records, manages
//! personal-data field definitions and mapping templates, and serves
//! aggregations, a RoPA export and transparency metrics.

pub mod api;
pub mod config;
pub mod metrics;
pub mod service;
pub mod store;

pub use api::{router, serve};
pub use config::RegistryConfig;
pub use service::{
    MappingSuggestion, Policy, Query, QueryParams, RangeBounds, Registry, RegistryError, RopaDocument, RopaEntry,
    Table, UnmappedField,
};
pub use store::{MemoryStore, SqliteStore, Store, StoreError, TimeRange};

use std::sync::Arc;

/// Builds a registry from configuration, opening the SQLite store if one is
/// configured.
pub fn open(config: &RegistryConfig) -> anyhow::Result<Registry> {
    let store: Arc<dyn Store> = match &config.database {
        Some(path) => Arc::new(SqliteStore::open(path)?),
        None => Arc::new(MemoryStore::new()),
    };
    Ok(Registry::new(store, config.policy()?)?)
}
