use std::fmt;

use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointId;
use crate::path::FieldPath;

/// Regulatory labels attached to a field, independent of where it occurs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldAttributes {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub personal_data: bool,
    #[serde(default)]
    pub special_category: bool,
    #[serde(default)]
    pub purposes: Vec<String>,
    #[serde(default)]
    pub legal_basis: String,
    #[serde(default)]
    pub recipients: Vec<String>,
    /// Retention period in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_period: Option<u64>,
}

/// A personal data indicator bound to one field of one endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldDefinition {
    pub endpoint: EndpointId,
    pub path: FieldPath,
    #[serde(flatten)]
    pub attributes: FieldAttributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DefinitionViolation {
    SpecialCategoryWithoutPersonalData,
    MissingPurpose,
    BadFieldPath,
    EmptyName,
    BadEndpoint,
}

impl fmt::Display for DefinitionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serialization");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

impl FieldAttributes {
    pub fn validate(&self) -> Vec<DefinitionViolation> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(DefinitionViolation::EmptyName);
        }
        if self.special_category && !self.personal_data {
            out.push(DefinitionViolation::SpecialCategoryWithoutPersonalData);
        }
        if self.personal_data && self.purposes.iter().all(|p| p.trim().is_empty()) {
            out.push(DefinitionViolation::MissingPurpose);
        }
        out
    }
}

impl FieldDefinition {
    pub fn new(endpoint: EndpointId, path: FieldPath, attributes: FieldAttributes) -> Self {
        Self { endpoint, path, attributes }
    }

    pub fn key(&self) -> (EndpointId, FieldPath) {
        (self.endpoint.clone(), self.path.clone())
    }

    pub fn validate(&self) -> Vec<DefinitionViolation> {
        let mut out = Vec::new();
        if self.endpoint.service.is_empty() || !self.endpoint.path_pattern.starts_with('/') {
            out.push(DefinitionViolation::BadEndpoint);
        }
        if !self.path.is_valid() {
            out.push(DefinitionViolation::BadFieldPath);
        }
        out.extend(self.attributes.validate());
        out
    }

    pub fn carries_purpose(&self, purpose: &str) -> bool {
        self.attributes.purposes.iter().any(|p| p == purpose)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TemplateEntry {
    pub path: FieldPath,
    #[serde(flatten)]
    pub attributes: FieldAttributes,
}

/// Reusable labels for endpoints that share a payload shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MappingTemplate {
    pub template_id: String,
    pub entries: Vec<TemplateEntry>,
}

impl MappingTemplate {
    pub fn validate(&self) -> Vec<DefinitionViolation> {
        let mut out = Vec::new();
        for entry in &self.entries {
            if !entry.path.is_valid() {
                out.push(DefinitionViolation::BadFieldPath);
            }
            out.extend(entry.attributes.validate());
        }
        out.dedup();
        out
    }

    pub fn instantiate(&self, endpoint: &EndpointId) -> impl Iterator<Item = FieldDefinition> + '_ {
        let endpoint = endpoint.clone();
        self.entries
            .iter()
            .map(move |e| FieldDefinition::new(endpoint.clone(), e.path.clone(), e.attributes.clone()))
    }
}
