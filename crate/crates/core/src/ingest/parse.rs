use std::fmt::Write as _;
use std::net::IpAddr;

use chrono::{DateTime, NaiveDateTime, Utc};
use thiserror::Error;

use super::record::{AccessLogRecord, CacheStatus, Method, MissingFields};
use super::schema::{Delimiter, FieldKind, LogSchema};

/// Why a line was rejected. `key()` is the counter name used in `IngestStats`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("unterminated quote or bracket")]
    Unterminated,
    #[error("bad client ip {0:?}")]
    ClientIp(String),
    #[error("bad timestamp {0:?}")]
    Timestamp(String),
    #[error("bad request {0:?}")]
    Request(String),
    #[error("bad content path {0:?}")]
    ContentPath(String),
    #[error("bad status code {0:?}")]
    Status(String),
    #[error("bad byte count {0:?}")]
    Bytes(String),
    #[error("bad delivery time {0:?}")]
    DeliveryTime(String),
}

impl RejectReason {
    pub fn key(&self) -> &'static str {
        match self {
            RejectReason::FieldCount { .. } => "field_count",
            RejectReason::Unterminated => "unterminated",
            RejectReason::ClientIp(_) => "client_ip",
            RejectReason::Timestamp(_) => "timestamp",
            RejectReason::Request(_) => "request",
            RejectReason::ContentPath(_) => "content_path",
            RejectReason::Status(_) => "status_code",
            RejectReason::Bytes(_) => "bytes",
            RejectReason::DeliveryTime(_) => "delivery_time",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line_no}: {reason}")]
pub struct ParseError {
    pub line_no: u64,
    pub reason: RejectReason,
}

/// Split a line into columns, honouring `"..."` (with `\` escapes) and `[...]` grouping.
pub fn tokenize(line: &str, delimiter: Delimiter) -> Result<Vec<String>, RejectReason> {
    let mut out = Vec::new();
    let mut chars = line.trim_end_matches(['\r', '\n']).chars().peekable();
    let is_sep = |c: char| match delimiter {
        Delimiter::Whitespace => c == ' ' || c == '\t',
        Delimiter::Char(d) => c == d,
    };

    loop {
        if matches!(delimiter, Delimiter::Whitespace) {
            while chars.peek().is_some_and(|c| is_sep(*c)) {
                chars.next();
            }
        }
        let Some(&first) = chars.peek() else { break };
        let mut tok = String::new();
        match first {
            '"' => {
                chars.next();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    match c {
                        '\\' => match chars.next() {
                            Some(n) => tok.push(n),
                            None => return Err(RejectReason::Unterminated),
                        },
                        '"' => {
                            closed = true;
                            break;
                        }
                        _ => tok.push(c),
                    }
                }
                if !closed {
                    return Err(RejectReason::Unterminated);
                }
            }
            '[' => {
                chars.next();
                let mut closed = false;
                for c in chars.by_ref() {
                    if c == ']' {
                        closed = true;
                        break;
                    }
                    tok.push(c);
                }
                if !closed {
                    return Err(RejectReason::Unterminated);
                }
            }
            _ => {
                while let Some(&c) = chars.peek() {
                    if is_sep(c) {
                        break;
                    }
                    tok.push(c);
                    chars.next();
                }
            }
        }
        out.push(tok);
        match delimiter {
            Delimiter::Whitespace => {}
            Delimiter::Char(_) => {
                // consume exactly one separator; a trailing separator yields an empty column
                match chars.next() {
                    Some(c) if is_sep(c) => {
                        if chars.peek().is_none() {
                            out.push(String::new());
                        }
                    }
                    Some(_) => return Err(RejectReason::Unterminated),
                    None => break,
                }
            }
        }
    }
    Ok(out)
}

/// Parse `dd/Mon/yyyy:HH:MM:SS ±hhmm` into a UTC instant.
///
/// The offset is applied arithmetically, so offsets beyond ±24h (seen in
/// hand-edited samples such as `-4000`) still resolve to a definite instant.
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    let (local, offset) = match text.rsplit_once(' ') {
        Some((l, o)) => (l, Some(o)),
        None => (text, None),
    };
    let naive = NaiveDateTime::parse_from_str(local, "%d/%b/%Y:%H:%M:%S").ok()?;
    let offset_secs = match offset {
        None => 0,
        Some(o) => {
            let (sign, digits) = match o.as_bytes().first()? {
                b'+' => (1i64, &o[1..]),
                b'-' => (-1i64, &o[1..]),
                _ => return None,
            };
            let digits = digits.replace(':', "");
            if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let hh: i64 = digits[..2].parse().ok()?;
            let mm: i64 = digits[2..].parse().ok()?;
            if mm >= 60 {
                return None;
            }
            sign * (hh * 3600 + mm * 60)
        }
    };
    let utc = naive.and_utc() - chrono::Duration::seconds(offset_secs);
    Some(utc)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%d/%b/%Y:%H:%M:%S +0000").to_string()
}

/// Canonical content path: scheme/authority, query and fragment removed.
pub fn canonical_path(raw: &str) -> Option<String> {
    let mut p = raw;
    // Absolute-form targets only; "/a://b" is an ordinary path.
    if let Some(idx) = p.find("://").filter(|_| !p.starts_with('/')) {
        let rest = &p[idx + 3..];
        p = match rest.find('/') {
            Some(slash) => &rest[slash..],
            None => "/",
        };
    }
    let end = p.find(['?', '#']).unwrap_or(p.len());
    let p = &p[..end];
    if p.starts_with('/') && !p.chars().any(char::is_whitespace) {
        Some(p.to_string())
    } else {
        None
    }
}

fn is_missing(tok: &str) -> bool {
    tok.is_empty() || tok == "-"
}

fn token_or(tok: &str, default: &str) -> String {
    if is_missing(tok) {
        default.to_string()
    } else {
        tok.to_string()
    }
}

/// Parse one raw line. `line_no` is carried into the error for reporting.
pub fn parse_line(raw: &str, line_no: u64, schema: &LogSchema) -> Result<AccessLogRecord, ParseError> {
    parse_inner(raw, schema).map_err(|reason| ParseError { line_no, reason })
}

fn parse_inner(raw: &str, schema: &LogSchema) -> Result<AccessLogRecord, RejectReason> {
    let tokens = tokenize(raw, schema.delimiter)?;
    if tokens.len() != schema.fields.len() {
        return Err(RejectReason::FieldCount {
            expected: schema.fields.len(),
            found: tokens.len(),
        });
    }

    let d = &schema.defaults;
    let mut client_ip: Option<IpAddr> = None;
    let mut timestamp = None;
    let mut method = Method::Other;
    let mut content_path: Option<String> = None;
    let mut status_code = 200u16;
    let mut bytes = 0u64;
    let mut delivery_time_ms = 0u64;
    let mut missing = MissingFields {
        bytes: true,
        delivery_time: true,
    };
    let mut agent_type = d.agent_type.clone();
    let mut service_type = d.service_type.clone();
    let mut cache_hit = CacheStatus::Unknown;
    let mut node_id = d.node_id.clone();
    let mut offering_id = d.offering_id.clone();
    let mut content_type = d.content_type.clone();

    for (kind, tok) in schema.fields.iter().zip(tokens.iter()) {
        let tok = tok.as_str();
        match kind {
            FieldKind::Ignore => {}
            FieldKind::ClientIp => {
                client_ip = Some(
                    tok.parse()
                        .map_err(|_| RejectReason::ClientIp(tok.to_string()))?,
                );
            }
            FieldKind::Timestamp => {
                timestamp = Some(
                    parse_timestamp(tok).ok_or_else(|| RejectReason::Timestamp(tok.to_string()))?,
                );
            }
            FieldKind::Request => {
                let mut parts = tok.split_whitespace();
                let (Some(m), Some(p)) = (parts.next(), parts.next()) else {
                    return Err(RejectReason::Request(tok.to_string()));
                };
                method = Method::from_token(m);
                content_path = Some(
                    canonical_path(p).ok_or_else(|| RejectReason::ContentPath(p.to_string()))?,
                );
            }
            FieldKind::Method => method = Method::from_token(tok),
            FieldKind::ContentPath => {
                content_path = Some(
                    canonical_path(tok).ok_or_else(|| RejectReason::ContentPath(tok.to_string()))?,
                );
            }
            FieldKind::StatusCode => {
                status_code = tok
                    .parse::<u16>()
                    .ok()
                    .filter(|s| (100..=799).contains(s))
                    .ok_or_else(|| RejectReason::Status(tok.to_string()))?;
            }
            FieldKind::Bytes => {
                if !is_missing(tok) {
                    bytes = tok.parse().map_err(|_| RejectReason::Bytes(tok.to_string()))?;
                    missing.bytes = false;
                }
            }
            FieldKind::DeliveryTimeMs => {
                if !is_missing(tok) {
                    delivery_time_ms = tok
                        .parse()
                        .map_err(|_| RejectReason::DeliveryTime(tok.to_string()))?;
                    missing.delivery_time = false;
                }
            }
            FieldKind::AgentType => agent_type = token_or(tok, &d.agent_type),
            FieldKind::ServiceType => service_type = token_or(tok, &d.service_type),
            FieldKind::CacheHit => cache_hit = CacheStatus::from_token(tok),
            FieldKind::NodeId => node_id = token_or(tok, &d.node_id),
            FieldKind::OfferingId => offering_id = token_or(tok, &d.offering_id),
            FieldKind::ContentType => content_type = token_or(tok, &d.content_type),
        }
    }

    Ok(AccessLogRecord {
        client_ip: client_ip.ok_or_else(|| RejectReason::ClientIp(String::new()))?,
        timestamp: timestamp.ok_or_else(|| RejectReason::Timestamp(String::new()))?,
        method,
        status_code,
        bytes,
        delivery_time_ms,
        agent_type,
        service_type,
        cache_hit,
        node_id,
        offering_id,
        content_path: content_path.ok_or_else(|| RejectReason::ContentPath(String::new()))?,
        content_type,
        missing,
    })
}

fn push_token(out: &mut String, tok: &str) {
    if tok.is_empty() || tok == "-" {
        out.push('-');
    } else if tok
        .chars()
        .any(|c| c.is_whitespace() || c == '"' || c == '[' || c == ']' || c == '\\')
    {
        out.push('"');
        for c in tok.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    } else {
        out.push_str(tok);
    }
}

/// Canonical emitter for the extended schema; `parse_line(format_line(r))` returns `r`.
pub fn format_line(r: &AccessLogRecord) -> String {
    let mut s = String::with_capacity(160);
    let _ = write!(
        s,
        "{} - - [{}] \"{} ",
        r.client_ip,
        format_timestamp(&r.timestamp),
        r.method,
    );
    for c in r.content_path.chars() {
        if c == '"' || c == '\\' {
            s.push('\\');
        }
        s.push(c);
    }
    let _ = write!(s, " HTTP/1.1\" {} ", r.status_code);
    if r.missing.bytes {
        s.push('-');
    } else {
        let _ = write!(s, "{}", r.bytes);
    }
    s.push(' ');
    if r.missing.delivery_time {
        s.push('-');
    } else {
        let _ = write!(s, "{}", r.delivery_time_ms);
    }
    for tok in [&r.agent_type, &r.service_type] {
        s.push(' ');
        push_token(&mut s, tok);
    }
    s.push(' ');
    s.push_str(match r.cache_hit {
        CacheStatus::Hit => "HIT",
        CacheStatus::Miss => "MISS",
        CacheStatus::Unknown => "-",
    });
    for tok in [&r.node_id, &r.offering_id, &r.content_type] {
        s.push(' ');
        push_token(&mut s, tok);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const EXT: &str = r#"64.0.0.1 - - [11/Dec/2016:05:33:28 -0400] "GET /support.html HTTP/1.1" 200 15340 87 desktop static HIT node-07 account1 text"#;

    #[test]
    fn extended_line_parses() {
        let r = parse_line(EXT, 1, &LogSchema::extended()).unwrap();
        assert_eq!(r.client_ip.to_string(), "64.0.0.1");
        assert_eq!(r.timestamp, Utc.with_ymd_and_hms(2016, 12, 11, 9, 33, 28).unwrap());
        assert_eq!(r.method, Method::Get);
        assert_eq!(r.status_code, 200);
        assert_eq!(r.bytes, 15340);
        assert_eq!(r.delivery_time_ms, 87);
        assert_eq!(r.content_path, "/support.html");
        assert_eq!(r.cache_hit, CacheStatus::Hit);
        assert_eq!(r.node_id, "node-07");
        assert_eq!(r.offering_id, "account1");
        assert_eq!(r.missing, MissingFields::default());
    }

    #[test]
    fn missing_bytes_defaults_to_zero_and_flags() {
        let line = EXT.replace(" 15340 ", " - ");
        let r = parse_line(&line, 1, &LogSchema::extended()).unwrap();
        assert_eq!(r.bytes, 0);
        assert!(r.missing.bytes);
        assert!(!r.missing.delivery_time);
    }

    #[test]
    fn missing_delivery_time_defaults_to_zero_and_flags() {
        let line = EXT.replace(" 87 ", " - ");
        let r = parse_line(&line, 1, &LogSchema::extended()).unwrap();
        assert_eq!(r.delivery_time_ms, 0);
        assert!(r.missing.delivery_time);
    }

    #[test]
    fn short_line_is_field_count_error() {
        let err = parse_line("1.2.3.4 - - [11/Dec/2016:05:33:28 +0000] \"GET / HTTP/1.1\"", 9, &LogSchema::extended())
            .unwrap_err();
        assert_eq!(err.line_no, 9);
        assert_eq!(
            err.reason,
            RejectReason::FieldCount {
                expected: 14,
                found: 5
            }
        );
        assert_eq!(err.reason.key(), "field_count");
    }

    #[test]
    fn error_kinds() {
        let schema = LogSchema::extended();
        let bad_status = EXT.replace(" 200 ", " abc ");
        assert_eq!(parse_line(&bad_status, 1, &schema).unwrap_err().reason.key(), "status_code");
        let out_of_range = EXT.replace(" 200 ", " 999 ");
        assert_eq!(parse_line(&out_of_range, 1, &schema).unwrap_err().reason.key(), "status_code");
        let bad_bytes = EXT.replace(" 15340 ", " 15k ");
        assert_eq!(parse_line(&bad_bytes, 1, &schema).unwrap_err().reason.key(), "bytes");
        let bad_ts = EXT.replace("11/Dec/2016", "11/Foo/2016");
        assert_eq!(parse_line(&bad_ts, 1, &schema).unwrap_err().reason.key(), "timestamp");
        let bad_ip = EXT.replace("64.0.0.1", "64.0.0");
        assert_eq!(parse_line(&bad_ip, 1, &schema).unwrap_err().reason.key(), "client_ip");
        let unterminated = EXT.replace("HTTP/1.1\"", "HTTP/1.1");
        assert!(parse_line(&unterminated, 1, &schema).is_err());
    }

    #[test]
    fn oversize_offset_is_applied_arithmetically() {
        let ts = parse_timestamp("11/Dec/2016:05:33:28 -4000").unwrap();
        assert_eq!(ts, Utc.with_ymd_and_hms(2016, 12, 12, 21, 33, 28).unwrap());
        assert!(parse_timestamp("11/Dec/2016:05:33:28 -0475").is_none());
        assert!(parse_timestamp("11/Dec/2016:05:33:28 0400").is_none());
    }

    #[test]
    fn canonical_paths() {
        assert_eq!(canonical_path("/a/b?x=1").unwrap(), "/a/b");
        assert_eq!(canonical_path("http://cdn.example/v/1.ts#t").unwrap(), "/v/1.ts");
        assert_eq!(canonical_path("https://cdn.example").unwrap(), "/");
        assert_eq!(canonical_path("/go/http://x/y").unwrap(), "/go/http://x/y");
        assert!(canonical_path("relative").is_none());
    }

    #[test]
    fn quoted_tokens_round_trip() {
        let mut r = parse_line(EXT, 1, &LogSchema::extended()).unwrap();
        r.agent_type = "Mozilla/5.0 (X11; \"Linux\")".into();
        r.node_id = String::new();
        r.content_path = r#"/a\b"c"#.into();
        let line = format_line(&r);
        let back = parse_line(&line, 1, &LogSchema::extended()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn char_delimiter() {
        let schema = LogSchema::from_toml_str(
            r#"
            fields = ["client_ip", "timestamp", "method", "content_path", "status_code", "node_id", "-"]
            delimiter = { char = "|" }
            "#,
        )
        .unwrap();
        let r = parse_line("::1|01/Jan/2020:00:00:00 +0000|POST|/up|201|n1|", 3, &schema).unwrap();
        assert_eq!(r.client_ip.to_string(), "::1");
        assert_eq!(r.method, Method::Post);
        assert_eq!(r.node_id, "n1");
        assert!(r.missing.bytes);
    }
}
