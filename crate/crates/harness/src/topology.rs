//! Toy shop topology: services, their endpoints and who calls whom.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_TOPOLOGY: &str = include_str!("../topologies/shop.json");

/// Placeholder replaced by the per-request token when a body is rendered.
pub const TOKEN: &str = "${token}";

/// Request header carrying the token from the load generator downstream.
pub const TOKEN_HEADER: &str = "x-demo-token";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Topology {
    pub entry: Entry,
    pub services: Vec<ServiceSpec>,
}

/// Where load enters the system and under which caller name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Entry {
    pub client: String,
    pub service: String,
    pub method: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceSpec {
    pub name: String,
    pub endpoints: Vec<EndpointSpec>,
    /// Added to every response; models work done by the service.
    #[serde(default)]
    pub service_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointSpec {
    pub method: String,
    /// `{name}` segments match any value.
    pub path: String,
    #[serde(default)]
    pub request_body_template: Option<Value>,
    #[serde(default)]
    pub response_body_template: Option<Value>,
    #[serde(default)]
    pub downstream_calls: Vec<Call>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Call {
    pub service: String,
    pub method: String,
    pub path: String,
    /// Host header sent with the call, e.g. an external address.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate service {0:?}")]
    DuplicateService(String),
    #[error("{0:?} calls unknown service {1:?}")]
    UnknownService(String, String),
    #[error("{caller:?} calls {service} {method} {path} which no endpoint serves")]
    UnknownEndpoint { caller: String, service: String, method: String, path: String },
    #[error("call graph has a cycle through {0:?}")]
    Cycle(String),
    #[error("entry {0} {1} {2} is not served")]
    BadEntry(String, String, String),
}

impl Topology {
    pub fn default_shop() -> Self {
        Self::parse(DEFAULT_TOPOLOGY).expect("bundled topology is valid")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?)
    }

    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let t: Topology = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }

    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut names = BTreeSet::new();
        for s in &self.services {
            if !names.insert(s.name.as_str()) {
                return Err(TopologyError::DuplicateService(s.name.clone()));
            }
        }
        for s in &self.services {
            for e in &s.endpoints {
                for c in &e.downstream_calls {
                    let Some(target) = self.service(&c.service) else {
                        return Err(TopologyError::UnknownService(s.name.clone(), c.service.clone()));
                    };
                    if target.endpoint(&c.method, &c.path).is_none() {
                        return Err(TopologyError::UnknownEndpoint {
                            caller: s.name.clone(),
                            service: c.service.clone(),
                            method: c.method.clone(),
                            path: c.path.clone(),
                        });
                    }
                }
            }
        }
        let entry = &self.entry;
        if self.service(&entry.service).and_then(|s| s.endpoint(&entry.method, &entry.path)).is_none() {
            return Err(TopologyError::BadEntry(entry.service.clone(), entry.method.clone(), entry.path.clone()));
        }
        self.check_acyclic()
    }

    /// Services called by `name`, in call order without repeats.
    pub fn callees(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.service(name).map(|s| s.endpoints.as_slice()).unwrap_or_default() {
            for c in &e.downstream_calls {
                if !out.contains(&c.service) {
                    out.push(c.service.clone());
                }
            }
        }
        out
    }

    fn check_acyclic(&self) -> Result<(), TopologyError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit<'a>(t: &'a Topology, n: &'a str, marks: &mut BTreeMap<&'a str, Mark>) -> Result<(), TopologyError> {
            match marks.get(n) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Visiting) => return Err(TopologyError::Cycle(n.to_owned())),
                None => {}
            }
            marks.insert(n, Mark::Visiting);
            for s in &t.services {
                if s.name == n {
                    for e in &s.endpoints {
                        for c in &e.downstream_calls {
                            visit(t, &c.service, marks)?;
                        }
                    }
                }
            }
            marks.insert(n, Mark::Done);
            Ok(())
        }
        let mut marks = BTreeMap::new();
        for s in &self.services {
            visit(self, &s.name, &mut marks)?;
        }
        Ok(())
    }

    /// Exchanges caused by one request to `service` `method` `path`,
    /// counting the request itself.
    pub fn exchanges_per_request(&self, service: &str, method: &str, path: &str) -> usize {
        let Some(e) = self.service(service).and_then(|s| s.endpoint(method, path)) else { return 1 };
        1 + e
            .downstream_calls
            .iter()
            .map(|c| self.exchanges_per_request(&c.service, &c.method, &c.path))
            .sum::<usize>()
    }
}

impl ServiceSpec {
    pub fn endpoint(&self, method: &str, path: &str) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| e.method.eq_ignore_ascii_case(method) && e.matches(path))
    }
}

impl EndpointSpec {
    pub fn matches(&self, path: &str) -> bool {
        let path = path.split('?').next().unwrap_or("");
        let want: Vec<&str> = self.path.split('/').collect();
        let got: Vec<&str> = path.split('/').collect();
        want.len() == got.len()
            && want.iter().zip(&got).all(|(w, g)| (w.starts_with('{') && w.ends_with('}') && !g.is_empty()) || w == g)
    }
}

/// Substitutes `${token}` in every string of a template.
pub fn render(template: &Value, token: &str) -> Value {
    match template {
        Value::String(s) => Value::String(s.replace(TOKEN, token)),
        Value::Array(a) => Value::Array(a.iter().map(|v| render(v, token)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), render(v, token))).collect()),
        other => other.clone(),
    }
}

/// Fills `{name}` path segments with `n`.
pub fn concrete_path(pattern: &str, n: u64) -> String {
    pattern
        .split('/')
        .map(|s| if s.starts_with('{') && s.ends_with('}') { n.to_string() } else { s.to_owned() })
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_topology() {
        let t = Topology::default_shop();
        assert_eq!(t.services.len(), 3);
        assert_eq!(t.callees("orders"), ["payment", "user"]);
        assert_eq!(t.exchanges_per_request("orders", "POST", "/orders"), 3);
        assert_eq!(t.exchanges_per_request("orders", "GET", "/orders/1"), 1);
    }

    #[test]
    fn cycle_rejected() {
        let mut t = Topology::default_shop();
        t.services[2].endpoints[0].downstream_calls.push(Call {
            service: "orders".into(),
            method: "GET".into(),
            path: "/orders/1".into(),
            host: None,
        });
        assert_eq!(t.validate(), Err(TopologyError::Cycle("orders".into())));
    }

    #[test]
    fn unknown_targets_rejected() {
        let mut t = Topology::default_shop();
        t.services[0].endpoints[0].downstream_calls[0].service = "billing".into();
        assert!(matches!(t.validate(), Err(TopologyError::UnknownService(..))));
        let mut t = Topology::default_shop();
        t.services[0].endpoints[0].downstream_calls[0].path = "/refunds".into();
        assert!(matches!(t.validate(), Err(TopologyError::UnknownEndpoint { .. })));
    }

    #[test]
    fn parse_error_has_line() {
        let err = Topology::parse("{\n  \"entry\": {\n    \"client\": 3\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn rendering() {
        let v = render(&serde_json::json!({"a": ["${token}@x", 1], "b": {"c": "${token}"}}), "T");
        assert_eq!(v, serde_json::json!({"a": ["T@x", 1], "b": {"c": "T"}}));
        assert_eq!(concrete_path("/users/{id}/x", 7), "/users/7/x");
        let e = EndpointSpec {
            method: "GET".into(),
            path: "/users/{id}".into(),
            request_body_template: None,
            response_body_template: None,
            downstream_calls: vec![],
        };
        assert!(e.matches("/users/9?x=1"));
        assert!(!e.matches("/users/"));
        assert!(!e.matches("/users/9/x"));
    }
}
