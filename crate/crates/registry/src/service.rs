use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use hawk_core::{
    validate_record, EndpointId, FieldDefinition, FieldPath, MappingTemplate, Phase, Side, TrafficRecord,
};
use hawk_release::{classify_host, evaluate_purpose_rule, EuSet, GeoClass, GeoTable, PurposeRule};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::metrics::Metrics;
use crate::store::{Store, StoreError, TimeRange};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid definition: {}", .0.join(", "))]
    InvalidDefinition(Vec<String>),
    #[error("invalid records: {}", .0.join(", "))]
    InvalidRecords(Vec<String>),
    #[error("not found")]
    NotFound,
    #[error("template {0} not found")]
    TemplateNotFound(String),
    #[error("no observations for {0}")]
    NoObservations(EndpointId),
    #[error("unknown query {0}")]
    UnknownQuery(String),
    #[error("missing parameter {0}")]
    MissingParameter(&'static str),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::InvalidDefinition(_) => "INVALID_DEFINITION",
            RegistryError::InvalidRecords(_) => "INVALID_RECORDS",
            RegistryError::NotFound => "NOT_FOUND",
            RegistryError::TemplateNotFound(_) => "TEMPLATE_NOT_FOUND",
            RegistryError::NoObservations(_) => "NO_OBSERVATIONS",
            RegistryError::UnknownQuery(_) => "UNKNOWN_QUERY",
            RegistryError::MissingParameter(_) => "MISSING_PARAMETER",
            RegistryError::Storage(_) => "STORAGE_FAILURE",
        }
    }
}

pub type Result<T> = std::result::Result<T, RegistryError>;

/// Static policy inputs of a registry instance.
#[derive(Debug, Clone)]
pub struct Policy {
    pub purpose_rules: Vec<PurposeRule>,
    pub geo_table: Arc<GeoTable>,
    pub eu: Arc<EuSet>,
    /// Purposes accepted in definitions; `None` accepts any string.
    pub vocabulary: Option<BTreeSet<String>>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            purpose_rules: Vec::new(),
            geo_table: Arc::new(GeoTable::bundled()),
            eu: Arc::new(EuSet::bundled(true)),
            vocabulary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnmappedField {
    pub endpoint: EndpointId,
    pub path: FieldPath,
    pub occurrences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MappingSuggestion {
    pub endpoint: EndpointId,
    pub template_id: String,
    pub score: f64,
    pub matching_paths: Vec<FieldPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub query: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeBounds {
    pub from: Option<i64>,
    pub to: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RopaEntry {
    pub endpoint: EndpointId,
    pub fields: Vec<FieldDefinition>,
    pub observed_window: [i64; 2],
    pub request_count: u64,
    pub recipients: Vec<String>,
    pub cross_border: BTreeMap<GeoClass, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RopaDocument {
    pub generated_at: i64,
    pub range: RangeBounds,
    pub entries: Vec<RopaEntry>,
    pub uncategorized: Vec<UnmappedField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    RequestsPerService,
    RequestsPerEndpoint,
    FlowsBetweenServices,
    FieldOccurrences,
    Initiators,
}

impl std::str::FromStr for Query {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Query> {
        Ok(match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "REQUESTS_PER_SERVICE" => Query::RequestsPerService,
            "REQUESTS_PER_ENDPOINT" => Query::RequestsPerEndpoint,
            "FLOWS_BETWEEN_SERVICES" => Query::FlowsBetweenServices,
            "FIELD_OCCURRENCES" => Query::FieldOccurrences,
            "INITIATORS" => Query::Initiators,
            _ => return Err(RegistryError::UnknownQuery(s.to_owned())),
        })
    }
}

impl Query {
    pub fn name(self) -> &'static str {
        match self {
            Query::RequestsPerService => "REQUESTS_PER_SERVICE",
            Query::RequestsPerEndpoint => "REQUESTS_PER_ENDPOINT",
            Query::FlowsBetweenServices => "FLOWS_BETWEEN_SERVICES",
            Query::FieldOccurrences => "FIELD_OCCURRENCES",
            Query::Initiators => "INITIATORS",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueryParams {
    pub range: TimeRange,
    pub purpose: Option<String>,
    pub field: Option<String>,
}

/// One logical interaction. Anchored on its client-side request record, or
/// on its earliest-stage record when no client side was observed.
#[derive(Debug, Clone)]
struct Exchange {
    anchor: TrafficRecord,
    paths: BTreeSet<FieldPath>,
}

/// The registry service. Reads run concurrently; ingest and definition
/// writes are serialized so metric accounting matches the store.
pub struct Registry {
    store: Arc<dyn Store>,
    policy: Policy,
    metrics: Metrics,
    observed: Mutex<BTreeSet<(EndpointId, FieldPath)>>,
    writes: Mutex<()>,
}

impl Registry {
    /// Opens a registry over `store`, rebuilding metrics from its contents.
    pub fn new(store: Arc<dyn Store>, policy: Policy) -> Result<Self> {
        let registry = Registry {
            store,
            policy,
            metrics: Metrics::new(),
            observed: Mutex::new(BTreeSet::new()),
            writes: Mutex::new(()),
        };
        let existing = registry.store.records(TimeRange::ALL)?;
        registry.account(&existing)?;
        Ok(registry)
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    fn destination(&self, record: &TrafficRecord) -> GeoClass {
        classify_host(&record.http.host, &self.policy.geo_table, &self.policy.eu)
    }

    fn account(&self, fresh: &[TrafficRecord]) -> Result<()> {
        let definitions = if self.policy.purpose_rules.is_empty() { Vec::new() } else { self.store.fields()? };
        let mut observed = self.observed.lock().unwrap();
        for r in fresh {
            self.metrics.observe(r, self.destination(r));
            for p in &r.payload_paths {
                observed.insert((r.endpoint.clone(), p.clone()));
            }
            for rule in &self.policy.purpose_rules {
                if let Some(v) = evaluate_purpose_rule(r, rule, &definitions) {
                    self.metrics.observe_violation(&v);
                }
            }
        }
        Ok(())
    }

    /// Stores a batch idempotently; returns how many records were new.
    pub fn store_records(&self, batch: &[TrafficRecord]) -> Result<usize> {
        let invalid: Vec<String> = batch
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let v = validate_record(r);
                (!v.is_empty()).then(|| {
                    let codes: Vec<_> = v.iter().map(|v| v.code()).collect();
                    format!("#{i}: {}", codes.join("|"))
                })
            })
            .collect();
        if !invalid.is_empty() {
            return Err(RegistryError::InvalidRecords(invalid));
        }
        let _guard = self.writes.lock().unwrap();
        let fresh = self.store.insert_records(batch)?;
        self.account(&fresh)?;
        Ok(fresh.len())
    }

    pub fn records(&self, range: TimeRange) -> Result<Vec<TrafficRecord>> {
        Ok(self.store.records(range)?)
    }

    pub fn record_count(&self) -> Result<usize> {
        Ok(self.store.record_count()?)
    }

    fn check_purposes<'a>(&self, purposes: impl IntoIterator<Item = &'a String>, out: &mut Vec<String>) {
        if let Some(vocab) = &self.policy.vocabulary {
            for p in purposes {
                if !vocab.contains(p) {
                    out.push(format!("UNKNOWN_PURPOSE({p})"));
                }
            }
        }
    }

    pub fn upsert_field(&self, def: FieldDefinition) -> Result<()> {
        let mut violations: Vec<String> = def.validate().iter().map(|v| v.to_string()).collect();
        self.check_purposes(&def.attributes.purposes, &mut violations);
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDefinition(violations));
        }
        let _guard = self.writes.lock().unwrap();
        self.store.upsert_field(&def)?;
        Ok(())
    }

    pub fn field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<FieldDefinition> {
        self.store.field(endpoint, path)?.ok_or(RegistryError::NotFound)
    }

    pub fn fields(&self) -> Result<Vec<FieldDefinition>> {
        Ok(self.store.fields()?)
    }

    pub fn delete_field(&self, endpoint: &EndpointId, path: &FieldPath) -> Result<()> {
        let _guard = self.writes.lock().unwrap();
        if self.store.delete_field(endpoint, path)? {
            Ok(())
        } else {
            Err(RegistryError::NotFound)
        }
    }

    pub fn put_template(&self, template: MappingTemplate) -> Result<()> {
        let mut violations: Vec<String> = template.validate().iter().map(|v| v.to_string()).collect();
        if template.template_id.trim().is_empty() {
            violations.push("EMPTY_TEMPLATE_ID".into());
        }
        self.check_purposes(template.entries.iter().flat_map(|e| &e.attributes.purposes), &mut violations);
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDefinition(violations));
        }
        let _guard = self.writes.lock().unwrap();
        self.store.put_template(&template)?;
        Ok(())
    }

    pub fn template(&self, id: &str) -> Result<MappingTemplate> {
        self.store.template(id)?.ok_or_else(|| RegistryError::TemplateNotFound(id.to_owned()))
    }

    pub fn templates(&self) -> Result<Vec<MappingTemplate>> {
        Ok(self.store.templates()?)
    }

    pub fn delete_template(&self, id: &str) -> Result<()> {
        let _guard = self.writes.lock().unwrap();
        if self.store.delete_template(id)? {
            Ok(())
        } else {
            Err(RegistryError::TemplateNotFound(id.to_owned()))
        }
    }

    fn observed_paths(&self, endpoint: &EndpointId) -> BTreeSet<FieldPath> {
        self.observed
            .lock()
            .unwrap()
            .iter()
            .filter(|(e, _)| e == endpoint)
            .map(|(_, p)| p.clone())
            .collect()
    }

    /// Creates a definition for every template entry already observed on
    /// `endpoint` and not yet defined; returns how many were created.
    pub fn apply_template(&self, id: &str, endpoint: &EndpointId) -> Result<usize> {
        let template = self.template(id)?;
        let observed = self.observed_paths(endpoint);
        let _guard = self.writes.lock().unwrap();
        let mut created = 0;
        for def in template.instantiate(endpoint) {
            if observed.contains(&def.path) && self.store.field(&def.endpoint, &def.path)?.is_none() {
                self.store.upsert_field(&def)?;
                created += 1;
            }
        }
        Ok(created)
    }

    /// Ranks every template by the Jaccard similarity of its path set and the
    /// paths observed on `endpoint`.
    pub fn suggest_mappings(&self, endpoint: &EndpointId) -> Result<Vec<MappingSuggestion>> {
        let observed = self.observed_paths(endpoint);
        if observed.is_empty() {
            return Err(RegistryError::NoObservations(endpoint.clone()));
        }
        let mut out: Vec<MappingSuggestion> = self
            .templates()?
            .into_iter()
            .map(|t| {
                let paths: BTreeSet<FieldPath> = t.entries.iter().map(|e| e.path.clone()).collect();
                let matching: Vec<FieldPath> = observed.intersection(&paths).cloned().collect();
                let union = observed.union(&paths).count();
                MappingSuggestion {
                    endpoint: endpoint.clone(),
                    template_id: t.template_id,
                    score: matching.len() as f64 / union as f64,
                    matching_paths: matching,
                }
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.template_id.cmp(&b.template_id)));
        Ok(out)
    }

    fn exchanges(&self, range: TimeRange) -> Result<Vec<Exchange>> {
        let mut grouped: BTreeMap<String, Vec<TrafficRecord>> = BTreeMap::new();
        for r in self.store.records(range)? {
            grouped.entry(r.request_id.clone()).or_default().push(r);
        }
        Ok(grouped
            .into_values()
            .map(|records| {
                let anchor = records
                    .iter()
                    .find(|r| r.side == Side::Client && r.phase == Phase::Request)
                    .or_else(|| records.iter().min_by_key(|r| (r.stage(), r.timestamp)))
                    .expect("non-empty group")
                    .clone();
                let paths = records
                    .iter()
                    .filter(|r| r.endpoint == anchor.endpoint)
                    .flat_map(|r| r.payload_paths.iter().cloned())
                    .collect();
                Exchange { anchor, paths }
            })
            .collect())
    }

    fn occurrences(exchanges: &[Exchange]) -> BTreeMap<(EndpointId, FieldPath), u64> {
        let mut counts = BTreeMap::new();
        for x in exchanges {
            for p in &x.paths {
                *counts.entry((x.anchor.endpoint.clone(), p.clone())).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Observed (endpoint, path) pairs lacking a definition, counted in
    /// distinct exchanges over the range.
    pub fn unmapped_fields(&self, range: TimeRange) -> Result<Vec<UnmappedField>> {
        let defined: BTreeSet<_> = self.fields()?.into_iter().map(|d| d.key()).collect();
        Ok(Self::occurrences(&self.exchanges(range)?)
            .into_iter()
            .filter(|(k, _)| !defined.contains(k))
            .map(|((endpoint, path), occurrences)| UnmappedField { endpoint, path, occurrences })
            .collect())
    }

    pub fn aggregate(&self, query: Query, params: &QueryParams) -> Result<Table> {
        let exchanges = self.exchanges(params.range)?;
        let count_by = |key: &dyn Fn(&Exchange) -> Vec<Value>| {
            let mut counts: BTreeMap<Vec<String>, (Vec<Value>, u64)> = BTreeMap::new();
            for x in &exchanges {
                let k = key(x);
                let sort_key = k.iter().map(|v| v.to_string()).collect();
                counts.entry(sort_key).or_insert((k, 0)).1 += 1;
            }
            counts.into_values().map(|(mut k, n)| {
                k.push(json!(n));
                k
            })
        };
        let (columns, rows): (&[&str], Vec<Vec<Value>>) = match query {
            Query::RequestsPerService => {
                (&["service", "requests"], count_by(&|x| vec![json!(x.anchor.endpoint.service)]).collect())
            }
            Query::RequestsPerEndpoint => {
                let allowed: Option<BTreeSet<EndpointId>> = match &params.purpose {
                    None => None,
                    Some(purpose) => Some(
                        self.fields()?
                            .into_iter()
                            .filter(|d| d.carries_purpose(purpose))
                            .map(|d| d.endpoint)
                            .collect(),
                    ),
                };
                let rows = count_by(&|x| {
                    let e = &x.anchor.endpoint;
                    vec![json!(e.service), json!(e.method), json!(e.path_pattern)]
                })
                .filter(|row| {
                    allowed.as_ref().is_none_or(|set| {
                        set.contains(&EndpointId::new(
                            row[0].as_str().unwrap_or_default(),
                            row[1].as_str().unwrap_or_default(),
                            row[2].as_str().unwrap_or_default(),
                        ))
                    })
                })
                .collect();
                (&["service", "method", "pathPattern", "requests"], rows)
            }
            Query::FlowsBetweenServices => (
                &["client", "server", "requests"],
                count_by(&|x| vec![json!(x.anchor.client_name()), json!(x.anchor.endpoint.service)]).collect(),
            ),
            Query::Initiators => {
                let servers: BTreeSet<&str> = exchanges.iter().map(|x| x.anchor.endpoint.service.as_str()).collect();
                let rows = count_by(&|x| vec![json!(x.anchor.client_name())])
                    .map(|mut row| {
                        let entry = !servers.contains(row[0].as_str().unwrap_or_default());
                        row.insert(1, json!(entry));
                        row
                    })
                    .collect();
                (&["client", "entryPoint", "requests"], rows)
            }
            Query::FieldOccurrences => {
                let field = params.field.as_deref().ok_or(RegistryError::MissingParameter("field"))?;
                let by_name: Option<BTreeSet<(EndpointId, FieldPath)>> = if field.starts_with('$') {
                    None
                } else {
                    Some(self.fields()?.into_iter().filter(|d| d.attributes.name == field).map(|d| d.key()).collect())
                };
                let rows = Self::occurrences(&exchanges)
                    .into_iter()
                    .filter(|(k, _)| match &by_name {
                        None => k.1.as_str() == field,
                        Some(keys) => keys.contains(k),
                    })
                    .map(|((e, p), n)| vec![json!(e.service), json!(e.method), json!(e.path_pattern), json!(p), json!(n)])
                    .collect();
                (&["service", "method", "pathPattern", "path", "occurrences"], rows)
            }
        };
        Ok(Table { query: query.name().into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows })
    }

    pub fn export_ropa(&self, range: TimeRange, now: i64) -> Result<RopaDocument> {
        let exchanges = self.exchanges(range)?;
        let definitions = self.fields()?;
        let mut per_endpoint: BTreeMap<EndpointId, Vec<&Exchange>> = BTreeMap::new();
        for x in &exchanges {
            per_endpoint.entry(x.anchor.endpoint.clone()).or_default().push(x);
        }
        let entries = per_endpoint
            .into_iter()
            .map(|(endpoint, xs)| {
                let fields: Vec<FieldDefinition> =
                    definitions.iter().filter(|d| d.endpoint == endpoint).cloned().collect();
                let mut recipients: BTreeSet<String> = BTreeSet::from([endpoint.service.clone()]);
                recipients.extend(fields.iter().flat_map(|d| d.attributes.recipients.iter().cloned()));
                let mut cross_border: BTreeMap<GeoClass, u64> = GeoClass::ALL.iter().map(|c| (*c, 0)).collect();
                for x in &xs {
                    let class = if x.anchor.side == Side::Client {
                        self.destination(&x.anchor)
                    } else {
                        GeoClass::Unknown
                    };
                    *cross_border.entry(class).or_insert(0) += 1;
                }
                let first = xs.iter().map(|x| x.anchor.timestamp).min().unwrap_or(0);
                let last = xs.iter().map(|x| x.anchor.timestamp).max().unwrap_or(0);
                RopaEntry {
                    endpoint,
                    fields,
                    observed_window: [first, last],
                    request_count: xs.len() as u64,
                    recipients: recipients.into_iter().collect(),
                    cross_border,
                }
            })
            .collect();
        let defined: BTreeSet<_> = definitions.iter().map(|d| d.key()).collect();
        let uncategorized = Self::occurrences(&exchanges)
            .into_iter()
            .filter(|(k, _)| !defined.contains(k))
            .map(|((endpoint, path), occurrences)| UnmappedField { endpoint, path, occurrences })
            .collect();
        Ok(RopaDocument {
            generated_at: now,
            range: RangeBounds { from: range.from, to: range.to },
            entries,
            uncategorized,
        })
    }

    /// Text exposition; the unmapped gauge is refreshed at scrape time.
    pub fn metrics_exposition(&self) -> Result<String> {
        let defined: BTreeSet<_> = self.fields()?.into_iter().map(|d| d.key()).collect();
        let unmapped = self.observed.lock().unwrap().iter().filter(|k| !defined.contains(*k)).count();
        self.metrics.set_unmapped(unmapped);
        Ok(self.metrics.render())
    }
}
