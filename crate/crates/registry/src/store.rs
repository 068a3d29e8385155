//! Persistence behind one repository interface: an in-memory store for tests
//! and an embedded SQLite store for runtime use.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use hawk_core::{EndpointId, FieldDefinition, FieldPath, MappingTemplate, RecordKey, TrafficRecord};
use rusqlite::{params, Connection, OptionalExtension};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Backend(String),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Backend(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Corrupt(e.to_string())
    }
}

/// Inclusive millisecond range; `None` leaves a side open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeRange {
    pub from: Option<i64>,
    pub to: Option<i64>,
}

impl TimeRange {
    pub const ALL: TimeRange = TimeRange { from: None, to: None };

    pub fn new(from: Option<i64>, to: Option<i64>) -> Self {
        TimeRange { from, to }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|x| t <= x)
    }

    fn bounds(&self) -> (i64, i64) {
        (self.from.unwrap_or(i64::MIN), self.to.unwrap_or(i64::MAX))
    }
}

pub trait Store: Send + Sync {
    /// Inserts records not already present by key and returns those that
    /// were new, in input order.
    fn insert_records(&self, records: &[TrafficRecord]) -> Result<Vec<TrafficRecord>, StoreError>;
    /// Records with a timestamp in range, ordered by (timestamp, key).
    fn records(&self, range: TimeRange) -> Result<Vec<TrafficRecord>, StoreError>;
    fn record_count(&self) -> Result<usize, StoreError>;

    fn upsert_field(&self, def: &FieldDefinition) -> Result<(), StoreError>;
    fn field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<Option<FieldDefinition>, StoreError>;
    /// All definitions ordered by (endpoint, path).
    fn fields(&self) -> Result<Vec<FieldDefinition>, StoreError>;
    fn delete_field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<bool, StoreError>;

    fn put_template(&self, template: &MappingTemplate) -> Result<(), StoreError>;
    fn template(&self, id: &str) -> Result<Option<MappingTemplate>, StoreError>;
    /// All templates ordered by id.
    fn templates(&self) -> Result<Vec<MappingTemplate>, StoreError>;
    fn delete_template(&self, id: &str) -> Result<bool, StoreError>;
}

fn sort_records(records: &mut [TrafficRecord]) {
    records.sort_by(|a, b| (a.timestamp, a.key()).cmp(&(b.timestamp, b.key())));
}

#[derive(Default)]
struct MemoryInner {
    records: BTreeMap<RecordKey, TrafficRecord>,
    fields: BTreeMap<(EndpointId, FieldPath), FieldDefinition>,
    templates: BTreeMap<String, MappingTemplate>,
}

#[derive(Default)]
pub struct MemoryStore {
    inner: RwLock<MemoryInner>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn insert_records(&self, records: &[TrafficRecord]) -> Result<Vec<TrafficRecord>, StoreError> {
        let mut inner = self.inner.write().unwrap();
        let mut fresh = Vec::new();
        for r in records {
            if let std::collections::btree_map::Entry::Vacant(e) = inner.records.entry(r.key()) {
                e.insert(r.clone());
                fresh.push(r.clone());
            }
        }
        Ok(fresh)
    }

    fn records(&self, range: TimeRange) -> Result<Vec<TrafficRecord>, StoreError> {
        let inner = self.inner.read().unwrap();
        let mut out: Vec<_> = inner.records.values().filter(|r| range.contains(r.timestamp)).cloned().collect();
        sort_records(&mut out);
        Ok(out)
    }

    fn record_count(&self) -> Result<usize, StoreError> {
        Ok(self.inner.read().unwrap().records.len())
    }

    fn upsert_field(&self, def: &FieldDefinition) -> Result<(), StoreError> {
        self.inner.write().unwrap().fields.insert(def.key(), def.clone());
        Ok(())
    }

    fn field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<Option<FieldDefinition>, StoreError> {
        Ok(self.inner.read().unwrap().fields.get(&(endpoint.clone(), path.clone())).cloned())
    }

    fn fields(&self) -> Result<Vec<FieldDefinition>, StoreError> {
        Ok(self.inner.read().unwrap().fields.values().cloned().collect())
    }

    fn delete_field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<bool, StoreError> {
        Ok(self.inner.write().unwrap().fields.remove(&(endpoint.clone(), path.clone())).is_some())
    }

    fn put_template(&self, template: &MappingTemplate) -> Result<(), StoreError> {
        self.inner.write().unwrap().templates.insert(template.template_id.clone(), template.clone());
        Ok(())
    }

    fn template(&self, id: &str) -> Result<Option<MappingTemplate>, StoreError> {
        Ok(self.inner.read().unwrap().templates.get(id).cloned())
    }

    fn templates(&self) -> Result<Vec<MappingTemplate>, StoreError> {
        Ok(self.inner.read().unwrap().templates.values().cloned().collect())
    }

    fn delete_template(&self, id: &str) -> Result<bool, StoreError> {
        Ok(self.inner.write().unwrap().templates.remove(id).is_some())
    }
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS records (
    request_id   TEXT NOT NULL,
    phase        TEXT NOT NULL,
    side         TEXT NOT NULL,
    ts           INTEGER NOT NULL,
    service      TEXT NOT NULL,
    method       TEXT NOT NULL,
    path_pattern TEXT NOT NULL,
    body         TEXT NOT NULL,
    PRIMARY KEY (request_id, phase, side)
);
CREATE INDEX IF NOT EXISTS records_ts ON records (ts);
CREATE INDEX IF NOT EXISTS records_endpoint ON records (service, method, path_pattern);
CREATE TABLE IF NOT EXISTS record_paths (
    request_id TEXT NOT NULL,
    phase      TEXT NOT NULL,
    side       TEXT NOT NULL,
    path       TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS record_paths_path ON record_paths (path);
CREATE TABLE IF NOT EXISTS fields (
    service      TEXT NOT NULL,
    method       TEXT NOT NULL,
    path_pattern TEXT NOT NULL,
    path         TEXT NOT NULL,
    body         TEXT NOT NULL,
    PRIMARY KEY (service, method, path_pattern, path)
);
CREATE TABLE IF NOT EXISTS templates (
    template_id TEXT PRIMARY KEY,
    body        TEXT NOT NULL
);
";

pub struct SqliteStore {
    conn: Mutex<Connection>,
}

impl SqliteStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(SqliteStore { conn: Mutex::new(conn) })
    }
}

impl Store for SqliteStore {
    fn insert_records(&self, records: &[TrafficRecord]) -> Result<Vec<TrafficRecord>, StoreError> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        let mut fresh = Vec::new();
        {
            let mut insert = tx.prepare_cached(
                "INSERT OR IGNORE INTO records (request_id, phase, side, ts, service, method, path_pattern, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            )?;
            let mut insert_path =
                tx.prepare_cached("INSERT INTO record_paths (request_id, phase, side, path) VALUES (?1, ?2, ?3, ?4)")?;
            for r in records {
                let (phase, side) = (r.phase.to_string(), r.side.to_string());
                let changed = insert.execute(params![
                    r.request_id,
                    phase,
                    side,
                    r.timestamp,
                    r.endpoint.service,
                    r.endpoint.method,
                    r.endpoint.path_pattern,
                    r.to_json(),
                ])?;
                if changed == 0 {
                    continue;
                }
                for p in &r.payload_paths {
                    insert_path.execute(params![r.request_id, phase, side, p.as_str()])?;
                }
                fresh.push(r.clone());
            }
        }
        tx.commit()?;
        Ok(fresh)
    }

    fn records(&self, range: TimeRange) -> Result<Vec<TrafficRecord>, StoreError> {
        let (from, to) = range.bounds();
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare_cached(
            "SELECT body FROM records WHERE ts >= ?1 AND ts <= ?2 ORDER BY ts, request_id, phase, side",
        )?;
        let rows = stmt.query_map(params![from, to], |row| row.get::<_, String>(0))?;
        let mut out = Vec::new();
        for body in rows {
            out.push(serde_json::from_str(&body?)?);
        }
        sort_records(&mut out);
        Ok(out)
    }

    fn record_count(&self) -> Result<usize, StoreError> {
        let conn = self.conn.lock().unwrap();
        let n: i64 = conn.query_row("SELECT COUNT(*) FROM records", [], |row| row.get(0))?;
        Ok(n as usize)
    }

    fn upsert_field(&self, def: &FieldDefinition) -> Result<(), StoreError> {
        let body = serde_json::to_string(def)?;
        let e = &def.endpoint;
        self.conn.lock().unwrap().execute(
            "INSERT INTO fields (service, method, path_pattern, path, body) VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT (service, method, path_pattern, path) DO UPDATE SET body = excluded.body",
            params![e.service, e.method, e.path_pattern, def.path.as_str(), body],
        )?;
        Ok(())
    }

    fn field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<Option<FieldDefinition>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let body: Option<String> = conn
            .query_row(
                "SELECT body FROM fields WHERE service = ?1 AND method = ?2 AND path_pattern = ?3 AND path = ?4",
                params![endpoint.service, endpoint.method, endpoint.path_pattern, path.as_str()],
                |row| row.get(0),
            )
            .optional()?;
        body.map(|b| serde_json::from_str(&b).map_err(StoreError::from)).transpose()
    }

    fn fields(&self) -> Result<Vec<FieldDefinition>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare_cached("SELECT body FROM fields")?;
        let rows = stmt.query_map([], |row| row.get::<_, String>(0))?;
        let mut out: Vec<FieldDefinition> = Vec::new();
        for body in rows {
            out.push(serde_json::from_str(&body?)?);
        }
        out.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(out)
    }

    fn delete_field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<bool, StoreError> {
        let n = self.conn.lock().unwrap().execute(
            "DELETE FROM fields WHERE service = ?1 AND method = ?2 AND path_pattern = ?3 AND path = ?4",
            params![endpoint.service, endpoint.method, endpoint.path_pattern, path.as_str()],
        )?;
        Ok(n > 0)
    }

    fn put_template(&self, template: &MappingTemplate) -> Result<(), StoreError> {
        let body = serde_json::to_string(template)?;
        self.conn.lock().unwrap().execute(
            "INSERT INTO templates (template_id, body) VALUES (?1, ?2)
             ON CONFLICT (template_id) DO UPDATE SET body = excluded.body",
            params![template.template_id, body],
        )?;
        Ok(())
    }

    fn template(&self, id: &str) -> Result<Option<MappingTemplate>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let body: Option<String> = conn
            .query_row("SELECT body FROM templates WHERE template_id = ?1", params![id], |row| row.get(0))
            .optional()?;
        body.map(|b| serde_json::from_str(&b).map_err(StoreError::from)).transpose()
    }

    fn templates(&self) -> Result<Vec<MappingTemplate>, StoreError> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare_cached("SELECT body FROM templates ORDER BY template_id")?;
        let rows = stmt.query_map([], |row| row.get::<_, String>(0))?;
        let mut out = Vec::new();
        for body in rows {
            out.push(serde_json::from_str(&body?)?);
        }
        Ok(out)
    }

    fn delete_template(&self, id: &str) -> Result<bool, StoreError> {
        let n = self.conn.lock().unwrap().execute("DELETE FROM templates WHERE template_id = ?1", params![id])?;
        Ok(n > 0)
    }
}
