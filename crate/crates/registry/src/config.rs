use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hawk_release::{EuSet, GeoTable, PurposeRule};
use serde::Deserialize;

use crate::service::Policy;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub name: String,
    pub target_service: String,
    pub method: String,
    pub required_purpose: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    pub listen: SocketAddr,
    /// SQLite file; the registry keeps everything in memory when unset.
    pub database: Option<PathBuf>,
    /// CIDR table (`prefix COUNTRY` per line); the bundled table when unset.
    pub geo_table: Option<PathBuf>,
    pub include_eea: bool,
    /// Newline-separated purpose vocabulary.
    pub purpose_vocabulary: Option<PathBuf>,
    pub enforce_vocabulary: bool,
    pub purpose_rules: Vec<RuleConfig>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            listen: "127.0.0.1:7400".parse().unwrap(),
            database: None,
            geo_table: None,
            include_eea: true,
            purpose_vocabulary: None,
            enforce_vocabulary: false,
            purpose_rules: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad geo table: {0}")]
    Geo(#[from] hawk_release::GeoError),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}

impl RegistryConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Ok(toml::from_str(&read(path)?)?)
    }

    pub fn policy(&self) -> Result<Policy, ConfigError> {
        let geo_table = match &self.geo_table {
            Some(p) => GeoTable::load(p)?,
            None => GeoTable::bundled(),
        };
        let vocabulary = match (&self.purpose_vocabulary, self.enforce_vocabulary) {
            (Some(p), true) => Some(
                read(p)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_owned)
                    .collect::<BTreeSet<_>>(),
            ),
            _ => None,
        };
        Ok(Policy {
            purpose_rules: self
                .purpose_rules
                .iter()
                .map(|r| PurposeRule {
                    name: r.name.clone(),
                    target_service: r.target_service.clone(),
                    method: r.method.to_ascii_uppercase(),
                    required_purpose: r.required_purpose.clone(),
                })
                .collect(),
            geo_table: Arc::new(geo_table),
            eu: Arc::new(EuSet::bundled(self.include_eea)),
            vocabulary,
        })
    }
}
