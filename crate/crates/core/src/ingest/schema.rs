use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One column of a log line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    ClientIp,
    Timestamp,
    /// Quoted `METHOD path PROTOCOL` triple; yields method and content path.
    Request,
    Method,
    ContentPath,
    StatusCode,
    Bytes,
    DeliveryTimeMs,
    AgentType,
    ServiceType,
    CacheHit,
    NodeId,
    OfferingId,
    ContentType,
    /// Column present in the line but not used (ident, user, referer...).
    #[serde(rename = "-")]
    Ignore,
}

/// How columns are separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    /// Runs of spaces/tabs; `"..."` and `[...]` group a column.
    Whitespace,
    /// A single separator character; `"..."` still groups.
    Char(char),
}

/// Values substituted when a token column holds `-`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldDefaults {
    pub agent_type: String,
    pub service_type: String,
    pub node_id: String,
    pub offering_id: String,
    pub content_type: String,
}

impl Default for FieldDefaults {
    fn default() -> Self {
        FieldDefaults {
            agent_type: "unknown".into(),
            service_type: "unknown".into(),
            // Empty node ids are dropped by `sanitize`.
            node_id: String::new(),
            offering_id: "unknown".into(),
            content_type: "unknown".into(),
        }
    }
}

/// Declares the column layout of a log source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSchema {
    pub fields: Vec<FieldKind>,
    #[serde(default = "default_delimiter")]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub defaults: FieldDefaults,
}

fn default_delimiter() -> Delimiter {
    Delimiter::Whitespace
}

impl Default for LogSchema {
    fn default() -> Self {
        Self::extended()
    }
}

impl LogSchema {
    /// Combined-log prefix followed by the CDN extension columns.
    ///
    /// `ip - - [ts] "METHOD path proto" status bytes delivery_ms agent service cache node offering content_type`
    pub fn extended() -> Self {
        use FieldKind::*;
        LogSchema {
            fields: vec![
                ClientIp,
                Ignore,
                Ignore,
                Timestamp,
                Request,
                StatusCode,
                Bytes,
                DeliveryTimeMs,
                AgentType,
                ServiceType,
                CacheHit,
                NodeId,
                OfferingId,
                ContentType,
            ],
            delimiter: Delimiter::Whitespace,
            defaults: FieldDefaults::default(),
        }
    }

    /// Plain combined log format (`... status bytes referer "user-agent"`).
    ///
    /// The CDN columns are absent and take their defaults, so the node id is
    /// empty and `sanitize` will drop such records unless a default node is
    /// configured.
    pub fn combined() -> Self {
        use FieldKind::*;
        LogSchema {
            fields: vec![
                ClientIp, Ignore, Ignore, Timestamp, Request, StatusCode, Bytes, Ignore, AgentType,
            ],
            delimiter: Delimiter::Whitespace,
            defaults: FieldDefaults::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let schema: LogSchema = toml::from_str(text).map_err(|e| e.to_string())?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read log schema {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("invalid log schema {}: {e}", path.display())))
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let has = |k: FieldKind| self.fields.contains(&k);
        if !has(FieldKind::ClientIp) {
            return Err("schema must declare client_ip".into());
        }
        if !has(FieldKind::Timestamp) {
            return Err("schema must declare timestamp".into());
        }
        if !has(FieldKind::Request) && !has(FieldKind::ContentPath) {
            return Err("schema must declare request or content_path".into());
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if *f != FieldKind::Ignore && !seen.insert(*f) {
                return Err(format!("field {f:?} declared twice"));
            }
        }
        if let Delimiter::Char(c) = self.delimiter {
            if c == '"' || c == '[' || c == ']' {
                return Err(format!("delimiter {c:?} collides with quoting"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_schema_parses() {
        let s = LogSchema::from_toml_str(
            r#"
            fields = ["client_ip", "timestamp", "method", "content_path", "status_code", "node_id"]
            delimiter = { char = "|" }
            [defaults]
            node_id = "edge-0"
            "#,
        )
        .unwrap();
        assert_eq!(s.fields.len(), 6);
        assert_eq!(s.delimiter, Delimiter::Char('|'));
        assert_eq!(s.defaults.node_id, "edge-0");
        assert_eq!(s.defaults.agent_type, "unknown");
    }

    #[test]
    fn schema_requires_ip_and_time() {
        assert!(LogSchema::from_toml_str(r#"fields = ["timestamp", "request"]"#).is_err());
        assert!(LogSchema::from_toml_str(r#"fields = ["client_ip", "request"]"#).is_err());
        assert!(LogSchema::from_toml_str(r#"fields = ["client_ip", "timestamp"]"#).is_err());
    }

    #[test]
    fn duplicate_fields_rejected() {
        let err = LogSchema::from_toml_str(
            r#"fields = ["client_ip", "timestamp", "request", "bytes", "bytes"]"#,
        )
        .unwrap_err();
        assert!(err.contains("twice"));
    }

    #[test]
    fn ignore_columns_may_repeat() {
        LogSchema::from_toml_str(r#"fields = ["client_ip", "-", "-", "timestamp", "request"]"#)
            .unwrap();
    }
}
