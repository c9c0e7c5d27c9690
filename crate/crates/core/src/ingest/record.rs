use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Request method, collapsed onto the verbs the feature builders care about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
    Patch,
    Other,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
            Method::Patch => "PATCH",
            Method::Other => "OTHER",
        }
    }

    /// Unrecognised verbs (HEAD, OPTIONS, CoAP codes...) map to `Other`.
    pub fn from_token(token: &str) -> Method {
        match token.to_ascii_uppercase().as_str() {
            "GET" => Method::Get,
            "POST" => Method::Post,
            "PUT" => Method::Put,
            "DELETE" => Method::Delete,
            "PATCH" => Method::Patch,
            _ => Method::Other,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cache (or service) hit indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheStatus {
    Hit,
    Miss,
    Unknown,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "HIT",
            CacheStatus::Miss => "MISS",
            CacheStatus::Unknown => "UNKNOWN",
        }
    }

    /// Accepts plain `HIT`/`MISS` as well as proxy-style `TCP_HIT`, `TCP_MISS`.
    pub fn from_token(token: &str) -> CacheStatus {
        let upper = token.to_ascii_uppercase();
        if upper.ends_with("HIT") {
            CacheStatus::Hit
        } else if upper.ends_with("MISS") {
            CacheStatus::Miss
        } else {
            CacheStatus::Unknown
        }
    }

    pub fn is_hit(self) -> bool {
        self == CacheStatus::Hit
    }
}

/// Numeric fields that were `-` in the raw line and were defaulted to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MissingFields {
    pub bytes: bool,
    pub delivery_time: bool,
}

/// One parsed request line carrying the thirteen raw application-log features.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RecordJson", try_from = "RecordJson")]
pub struct AccessLogRecord {
    pub client_ip: IpAddr,
    pub timestamp: DateTime<Utc>,
    pub method: Method,
    pub status_code: u16,
    pub bytes: u64,
    pub delivery_time_ms: u64,
    pub agent_type: String,
    pub service_type: String,
    pub cache_hit: CacheStatus,
    pub node_id: String,
    pub offering_id: String,
    pub content_path: String,
    pub content_type: String,
    pub missing: MissingFields,
}

impl AccessLogRecord {
    /// 4xx and 5xx responses.
    pub fn is_error(&self) -> bool {
        (400..600).contains(&self.status_code)
    }

    pub fn unix_seconds(&self) -> i64 {
        self.timestamp.timestamp()
    }
}

/// NDJSON wire form: exactly the thirteen feature names, with `null` for
/// numeric fields that were absent in the source line.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    client_ip: String,
    timestamp: DateTime<Utc>,
    method: Method,
    status_code: u16,
    bytes: Option<u64>,
    delivery_time_ms: Option<u64>,
    agent_type: String,
    service_type: String,
    cache_hit: CacheStatus,
    node_id: String,
    offering_id: String,
    content_path: String,
    content_type: String,
}

impl From<AccessLogRecord> for RecordJson {
    fn from(r: AccessLogRecord) -> Self {
        RecordJson {
            client_ip: r.client_ip.to_string(),
            timestamp: r.timestamp,
            method: r.method,
            status_code: r.status_code,
            bytes: (!r.missing.bytes).then_some(r.bytes),
            delivery_time_ms: (!r.missing.delivery_time).then_some(r.delivery_time_ms),
            agent_type: r.agent_type,
            service_type: r.service_type,
            cache_hit: r.cache_hit,
            node_id: r.node_id,
            offering_id: r.offering_id,
            content_path: r.content_path,
            content_type: r.content_type,
        }
    }
}

impl TryFrom<RecordJson> for AccessLogRecord {
    type Error = String;

    fn try_from(j: RecordJson) -> Result<Self, Self::Error> {
        let client_ip = IpAddr::from_str(&j.client_ip).map_err(|e| format!("client_ip: {e}"))?;
        if !(100..=799).contains(&j.status_code) {
            return Err(format!("status_code {} out of range", j.status_code));
        }
        if !j.content_path.starts_with('/') {
            return Err(format!("content_path {:?} must start with '/'", j.content_path));
        }
        Ok(AccessLogRecord {
            client_ip,
            timestamp: j.timestamp,
            method: j.method,
            status_code: j.status_code,
            bytes: j.bytes.unwrap_or(0),
            delivery_time_ms: j.delivery_time_ms.unwrap_or(0),
            agent_type: j.agent_type,
            service_type: j.service_type,
            cache_hit: j.cache_hit,
            node_id: j.node_id,
            offering_id: j.offering_id,
            content_path: j.content_path,
            content_type: j.content_type,
            missing: MissingFields {
                bytes: j.bytes.is_none(),
                delivery_time: j.delivery_time_ms.is_none(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn sample() -> AccessLogRecord {
        AccessLogRecord {
            client_ip: "10.0.0.7".parse().unwrap(),
            timestamp: Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 5).unwrap(),
            method: Method::Get,
            status_code: 404,
            bytes: 0,
            delivery_time_ms: 12,
            agent_type: "iphone".into(),
            service_type: "live".into(),
            cache_hit: CacheStatus::Miss,
            node_id: "node-03".into(),
            offering_id: "acct-1".into(),
            content_path: "/live/a.m3u8".into(),
            content_type: "video".into(),
            missing: MissingFields {
                bytes: true,
                delivery_time: false,
            },
        }
    }

    #[test]
    fn json_keys_are_the_thirteen_fields() {
        let v = serde_json::to_value(sample()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "agent_type",
                "bytes",
                "cache_hit",
                "client_ip",
                "content_path",
                "content_type",
                "delivery_time_ms",
                "method",
                "node_id",
                "offering_id",
                "service_type",
                "status_code",
                "timestamp"
            ]
        );
        assert!(v["bytes"].is_null());
    }

    #[test]
    fn json_round_trip_keeps_missing_flags() {
        let r = sample();
        let text = serde_json::to_string(&r).unwrap();
        let back: AccessLogRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn cache_tokens() {
        assert_eq!(CacheStatus::from_token("TCP_HIT"), CacheStatus::Hit);
        assert_eq!(CacheStatus::from_token("miss"), CacheStatus::Miss);
        assert_eq!(CacheStatus::from_token("-"), CacheStatus::Unknown);
    }

    #[test]
    fn error_classes() {
        let mut r = sample();
        assert!(r.is_error());
        r.status_code = 302;
        assert!(!r.is_error());
        r.status_code = 503;
        assert!(r.is_error());
    }
}
