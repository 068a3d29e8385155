use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    pub listen: SocketAddr,
    pub registry_url: String,
    /// Holds the spool, its committed offset and the dead-letter log.
    pub data_dir: PathBuf,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            listen: "127.0.0.1:7300".parse().unwrap(),
            registry_url: "http://127.0.0.1:7400".into(),
            data_dir: PathBuf::from("hawk-collector"),
        }
    }
}

impl CollectorConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}
