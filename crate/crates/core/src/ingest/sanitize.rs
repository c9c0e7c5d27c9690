use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::record::AccessLogRecord;

/// Line accounting for one ingest pass. `lines_read = lines_parsed + lines_rejected`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines_read: u64,
    pub lines_parsed: u64,
    pub lines_rejected: u64,
    pub rejection_reasons: BTreeMap<String, u64>,
}

impl IngestStats {
    pub fn reject(&mut self, reason: &str) {
        self.lines_read += 1;
        self.lines_rejected += 1;
        *self.rejection_reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn accept(&mut self) {
        self.lines_read += 1;
        self.lines_parsed += 1;
    }

    /// Counters are commutative, so chunk-local stats can be merged in any order.
    pub fn merge(&mut self, other: &IngestStats) {
        self.lines_read += other.lines_read;
        self.lines_parsed += other.lines_parsed;
        self.lines_rejected += other.lines_rejected;
        for (k, v) in &other.rejection_reasons {
            *self.rejection_reasons.entry(k.clone()).or_default() += v;
        }
    }

    /// Fold the sanitize pass into parse-level stats: records dropped by
    /// sanitize move from `parsed` to `rejected`.
    pub fn absorb_sanitize(&mut self, sanitize: &IngestStats) {
        self.lines_parsed -= sanitize.lines_rejected;
        self.lines_rejected += sanitize.lines_rejected;
        for (k, v) in &sanitize.rejection_reasons {
            *self.rejection_reasons.entry(k.clone()).or_default() += v;
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.lines_read == self.lines_parsed + self.lines_rejected
    }
}

/// Drop records without a node, remove exact duplicates (first occurrence
/// wins) and stable-sort by timestamp.
///
/// A record holds every column of its source line, so record equality is
/// equality of the canonical line.
pub fn sanitize(records: Vec<AccessLogRecord>) -> (Vec<AccessLogRecord>, IngestStats) {
    let mut stats = IngestStats::default();
    let mut kept = Vec::with_capacity(records.len());
    {
        let mut seen: HashSet<&AccessLogRecord> = HashSet::with_capacity(records.len());
        for (idx, r) in records.iter().enumerate() {
            if r.node_id.trim().is_empty() {
                stats.reject("missing_node");
            } else if !seen.insert(r) {
                stats.reject("duplicate");
            } else {
                stats.accept();
                kept.push(idx);
            }
        }
    }
    let mut slots: Vec<Option<AccessLogRecord>> = records.into_iter().map(Some).collect();
    let mut out: Vec<AccessLogRecord> = kept.into_iter().filter_map(|i| slots[i].take()).collect();
    out.sort_by_key(|r| r.timestamp);
    (out, stats)
}
