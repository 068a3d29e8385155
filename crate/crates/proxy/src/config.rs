use std::net::SocketAddr;
use std::path::Path;

use hawk_core::{EndpointError, PatternRule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix for environment overrides, e.g. `HAWK_PROXY_UPSTREAM_ADDRESS`.
pub const ENV_PREFIX: &str = "HAWK_PROXY_";

/// Which halves of the exchange this instance reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    /// Stages ① and ④: the caller's view.
    ClientSide,
    /// Stages ② and ③: the callee's view.
    ServerSide,
    Both,
}

impl Role {
    pub fn client(self) -> bool {
        matches!(self, Role::ClientSide | Role::Both)
    }

    pub fn server(self) -> bool {
        matches!(self, Role::ServerSide | Role::Both)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub listen_address: SocketAddr,
    /// `host:port` or `http://host:port`.
    pub upstream_address: String,
    /// Logical service name used in endpoint ids.
    pub service_name: String,
    pub role: Role,
    #[serde(default = "default_request_id_header")]
    pub request_id_header: String,
    #[serde(default = "default_capacity")]
    pub emit_buffer_capacity: usize,
    pub collector_endpoint: String,
    /// Caller name recorded when the request has no `x-hawk-client` header.
    #[serde(default)]
    pub client_name: Option<String>,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    /// Dynamic path segment rules: `int`, `uuid`, `re:<expr>`.
    #[serde(default = "default_rules")]
    pub pattern_rules: Vec<String>,
}

fn default_request_id_header() -> String {
    "x-request-id".into()
}

fn default_capacity() -> usize {
    10_000
}

fn default_max_body() -> usize {
    1_048_576
}

fn default_rules() -> Vec<String> {
    vec!["int".into(), "uuid".into()]
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

const INTEGER_KEYS: [&str; 2] = ["emit_buffer_capacity", "max_body_bytes"];
const LIST_KEYS: [&str; 1] = ["pattern_rules"];

impl ProxyConfig {
    pub fn new(listen: SocketAddr, upstream: &str, service: &str, role: Role, collector: &str) -> Self {
        ProxyConfig {
            listen_address: listen,
            upstream_address: upstream.into(),
            service_name: service.into(),
            role,
            request_id_header: default_request_id_header(),
            emit_buffer_capacity: default_capacity(),
            collector_endpoint: collector.into(),
            client_name: None,
            max_body_bytes: default_max_body(),
            pattern_rules: default_rules(),
        }
    }

    /// Reads the TOML file (if any) and applies `HAWK_PROXY_*` overrides
    /// from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_parts(&text, std::env::vars())
    }

    /// `env` yields `(NAME, value)` pairs; unrelated names are ignored.
    pub fn from_parts(toml_text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(toml_text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (name, value) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            let value = if INTEGER_KEYS.contains(&key.as_str()) {
                let n = value
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| ConfigError::Parse(format!("{name} must be an integer")))?;
                toml::Value::Integer(n)
            } else if LIST_KEYS.contains(&key.as_str()) {
                toml::Value::Array(
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| s.to_owned().into()).collect(),
                )
            } else {
                toml::Value::String(value)
            };
            table.insert(key, value);
        }
        let cfg: ProxyConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.emit_buffer_capacity == 0 {
            return Err(ConfigError::Invalid("emit_buffer_capacity must be > 0".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(ConfigError::Invalid("max_body_bytes must be > 0".into()));
        }
        if self.request_id_header.parse::<axum::http::HeaderName>().is_err() {
            return Err(ConfigError::Invalid(format!("bad header name {:?}", self.request_id_header)));
        }
        self.rules().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn rules(&self) -> Result<Vec<PatternRule>, EndpointError> {
        self.pattern_rules.iter().map(|s| PatternRule::parse(s)).collect()
    }

    pub fn upstream_base(&self) -> String {
        let a = self.upstream_address.trim_end_matches('/');
        if a.contains("://") {
            a.to_owned()
        } else {
            format!("http://{a}")
        }
    }
}
