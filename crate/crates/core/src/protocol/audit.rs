//! Privacy audit over the canonical form of every message.
//!
//! A message passes when (a) its kind's schema has no private field and its
//! canonical JSON uses only schema keys, (b) no string carries a
//! private-scope marker, and (c) no floating-point value equals any private
//! feature value at 9 significant digits.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::message::{Message, MessageKind};
use crate::data::{Dataset, PRIVATE_MARKER_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "snake_case")]
pub enum AuditVerdict {
    Pass,
    Fail(Vec<String>),
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, AuditVerdict::Pass)
    }
}

const ENVELOPE_KEYS: [&str; 5] = ["sender", "receiver", "kind", "payload", "byte_size"];

fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn is_private_field(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.contains("private") || lower.contains("pri_") || lower == "marker"
}

/// Holds the 9-significant-digit renderings of every private value in a
/// dataset. Exact zeros are left out: zero is the featurizer's padding value
/// and carries no information about any user.
#[derive(Debug, Clone)]
pub struct Auditor {
    private_values: HashSet<String>,
}

impl Auditor {
    pub fn new(dataset: &Dataset) -> Self {
        let private_values = dataset
            .private_shards()
            .iter()
            .flat_map(|s| s.features().iter())
            .filter(|v| **v != 0.0)
            .map(|v| sig9(*v))
            .collect();
        Auditor { private_values }
    }

    pub fn audit(&self, msg: &Message) -> AuditVerdict {
        self.audit_canonical(&msg.canonical())
    }

    /// Audits raw canonical text, e.g. a message captured off the wire.
    pub fn audit_canonical(&self, text: &str) -> AuditVerdict {
        let mut reasons = Vec::new();
        if text.contains(PRIVATE_MARKER_PREFIX) {
            reasons.push("private-scope marker in payload".to_string());
        }
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                reasons.push(format!("not a canonical message: {e}"));
                return AuditVerdict::Fail(reasons);
            }
        };
        let kind = value
            .get("kind")
            .cloned()
            .and_then(|k| serde_json::from_value::<MessageKind>(k).ok());
        match (&value, kind) {
            (Value::Object(map), Some(kind)) => {
                if let Some(field) = kind.schema().iter().find(|f| is_private_field(f)) {
                    reasons.push(format!("{kind:?} schema admits private field `{field}`"));
                }
                for key in map.keys() {
                    if !ENVELOPE_KEYS.contains(&key.as_str()) {
                        reasons.push(format!("unexpected envelope field `{key}`"));
                    }
                }
                if let Some(payload) = map.get("payload") {
                    check_keys(payload, kind.schema(), &mut reasons);
                }
            }
            _ => reasons.push("missing or unknown message kind".to_string()),
        }
        self.scan_values(&value, &mut reasons);
        if reasons.is_empty() {
            AuditVerdict::Pass
        } else {
            AuditVerdict::Fail(reasons)
        }
    }

    fn scan_values(&self, value: &Value, reasons: &mut Vec<String>) {
        match value {
            Value::Number(n) if n.is_f64() => {
                if let Some(v) = n.as_f64() {
                    let key = sig9(v);
                    if self.private_values.contains(&key) {
                        reasons.push(format!("private feature value {key} in payload"));
                    }
                }
            }
            Value::String(s) if s.contains(PRIVATE_MARKER_PREFIX) => {
                reasons.push("private-scope marker string".to_string());
            }
            Value::Array(items) => items.iter().for_each(|v| self.scan_values(v, reasons)),
            Value::Object(map) => map.values().for_each(|v| self.scan_values(v, reasons)),
            _ => {}
        }
    }
}

fn check_keys(value: &Value, schema: &[&str], reasons: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (key, v) in map {
                if !schema.contains(&key.as_str()) {
                    reasons.push(format!("field `{key}` not in schema"));
                }
                check_keys(v, schema, reasons);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| check_keys(v, schema, reasons)),
        _ => {}
    }
}

/// One-shot audit against a dataset's private shards.
pub fn audit_message(msg: &Message, dataset: &Dataset) -> AuditVerdict {
    Auditor::new(dataset).audit(msg)
}
