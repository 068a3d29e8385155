//! Purpose-limitation check: data sent to a target endpoint must be
//! labelled with the purpose the rule requires.

use hawk_core::{EndpointId, FieldDefinition, Phase, Side, TrafficRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PurposeRule {
    /// Label value used in metrics.
    pub name: String,
    pub target_service: String,
    pub method: String,
    pub required_purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PurposeViolation {
    pub rule: String,
    pub client: String,
    pub endpoint: EndpointId,
    pub request_id: String,
}

/// Evaluated on the server-side request record, so each exchange is judged
/// once. `definitions` may contain labels for any endpoint; only those of
/// the record's endpoint are consulted.
pub fn evaluate_purpose_rule<'a>(
    record: &TrafficRecord,
    rule: &PurposeRule,
    definitions: impl IntoIterator<Item = &'a FieldDefinition>,
) -> Option<PurposeViolation> {
    if record.side != Side::Server
        || record.phase != Phase::Request
        || record.endpoint.service != rule.target_service
        || !record.endpoint.method.eq_ignore_ascii_case(&rule.method)
    {
        return None;
    }
    let labelled = definitions
        .into_iter()
        .any(|d| d.endpoint == record.endpoint && d.carries_purpose(&rule.required_purpose));
    (!labelled).then(|| PurposeViolation {
        rule: rule.name.clone(),
        client: record.client_name().to_owned(),
        endpoint: record.endpoint.clone(),
        request_id: record.request_id.clone(),
    })
}
