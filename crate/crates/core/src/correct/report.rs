use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::timeseries::{EventKind, TimeSeriesEvent};
use super::CorrectionConfig;
use crate::bayesopt::BoTrace;
use crate::detect::{AnomalyCandidate, Attack, DemotionReason, RuleCut, RuleSet, Status};
use crate::ingest::IngestStats;
use crate::perspectives::{NormalizationParams, Perspective, WindowSpec};

pub const REPORT_VERSION: u32 = 1;

/// Everything needed to re-derive the verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub seed: u64,
    pub rules: RuleSet,
    pub thresholds: BTreeMap<Perspective, Vec<RuleCut>>,
    pub normalization: BTreeMap<Perspective, NormalizationParams>,
    /// Keyed by what was tuned, e.g. `gmm_k_ip`.
    pub bo_traces: BTreeMap<String, BoTrace>,
    /// Chosen model hyperparameters.
    pub model: BTreeMap<String, f64>,
    pub correction: CorrectionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub candidates: usize,
    pub confirmed: usize,
    pub demoted: usize,
    pub promoted: usize,
    pub compromised_nodes: BTreeMap<Attack, usize>,
    pub malicious_ips: BTreeMap<Attack, usize>,
    pub abnormal_contents: BTreeMap<Attack, usize>,
    /// Demoted candidates, i.e. preliminary false positives removed.
    pub false_positives_removed: usize,
    /// Confirmed candidates the identification stage had missed.
    pub false_negatives_recovered: usize,
    pub demotions: BTreeMap<DemotionReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub kind: EventKind,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub nodes: Vec<String>,
    pub ips: Vec<String>,
    pub contents: Vec<String>,
    /// Events that implicate a confirmed entity of this attack.
    pub time_ranges: Vec<TimeRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForensicReport {
    pub version: u32,
    pub window: WindowSpec,
    pub counts: ReportCounts,
    pub attacks: BTreeMap<Attack, AttackSection>,
    pub events: Vec<TimeSeriesEvent>,
    /// Every candidate with its evidence chain, sorted by perspective and entity.
    pub candidates: Vec<AnomalyCandidate>,
    pub audit: AuditTrail,
}

pub fn summarize(
    candidates: Vec<AnomalyCandidate>,
    events: Vec<TimeSeriesEvent>,
    window: WindowSpec,
    audit: AuditTrail,
) -> ForensicReport {
    let mut counts = ReportCounts {
        candidates: candidates.len(),
        ..Default::default()
    };
    let mut attacks: BTreeMap<Attack, AttackSection> =
        [Attack::Dos, Attack::Cpa].into_iter().map(|a| (a, AttackSection::default())).collect();
    for c in &candidates {
        counts.promoted += usize::from(c.promoted);
        match c.status {
            Status::Confirmed => {
                counts.confirmed += 1;
                counts.false_negatives_recovered += usize::from(c.promoted);
                let section = attacks.entry(c.attack).or_default();
                let (list, tally) = match c.perspective {
                    Perspective::Node => (&mut section.nodes, &mut counts.compromised_nodes),
                    Perspective::Ip => (&mut section.ips, &mut counts.malicious_ips),
                    Perspective::Content => (&mut section.contents, &mut counts.abnormal_contents),
                    Perspective::Offering => continue,
                };
                list.push(c.entity.clone());
                *tally.entry(c.attack).or_default() += 1;
            }
            Status::Demoted => {
                counts.demoted += 1;
                counts.false_positives_removed += 1;
                if let Some(r) = c.demotion {
                    *counts.demotions.entry(r).or_default() += 1;
                }
            }
            Status::Preliminary => {}
        }
    }
    for (attack, section) in attacks.iter_mut() {
        section.nodes.sort();
        section.ips.sort();
        section.contents.sort();
        let confirmed: BTreeSet<(Perspective, &str)> = candidates
            .iter()
            .filter(|c| c.status == Status::Confirmed && c.attack == *attack)
            .map(|c| (c.perspective, c.entity.as_str()))
            .collect();
        section.time_ranges = events
            .iter()
            .filter(|e| e.crowd_content.is_none() && e.kind.corroborates(*attack))
            .filter(|e| confirmed.iter().any(|(p, ent)| e.implicates(*p, ent)))
            .map(|e| TimeRange {
                kind: e.kind,
                start: e.start,
                end: e.end,
                magnitude: e.magnitude,
            })
            .collect();
    }
    ForensicReport {
        version: REPORT_VERSION,
        window,
        counts,
        attacks,
        events,
        candidates,
        audit,
    }
}

impl ForensicReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &AnomalyCandidate> {
        self.candidates.iter().filter(|c| c.status == Status::Confirmed)
    }

    /// Plain-text summary for people.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let end = self.window.start + chrono::Duration::seconds(self.window.duration_secs);
        let c = &self.counts;
        let _ = writeln!(s, "Forensic summary for {} .. {}", self.window.start.to_rfc3339(), end.to_rfc3339());
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{} candidates: {} confirmed, {} demoted as false positives, {} recovered by promotion",
            c.candidates, c.confirmed, c.false_positives_removed, c.false_negatives_recovered
        );
        for (attack, section) in &self.attacks {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{attack}: {} compromised nodes, {} malicious IPs, {} abnormal contents",
                section.nodes.len(),
                section.ips.len(),
                section.contents.len()
            );
            for (label, list) in [("nodes", &section.nodes), ("ips", &section.ips), ("contents", &section.contents)] {
                if !list.is_empty() {
                    let _ = writeln!(s, "  {label}: {}", list.join(", "));
                }
            }
            for r in &section.time_ranges {
                let _ = writeln!(
                    s,
                    "  {:?} {} .. {} (z {:.1})",
                    r.kind,
                    r.start.to_rfc3339(),
                    r.end.to_rfc3339(),
                    r.magnitude
                );
            }
        }
        if !c.demotions.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Demotions:");
            for (reason, n) in &c.demotions {
                let _ = writeln!(s, "  {reason}: {n}");
            }
        }
        let crowds: Vec<&TimeSeriesEvent> = self.events.iter().filter(|e| e.crowd_content.is_some()).collect();
        if !crowds.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Crowd-like bursts treated as benign:");
            for e in crowds {
                let _ = writeln!(
                    s,
                    "  {} .. {} on {}",
                    e.start.to_rfc3339(),
                    e.end.to_rfc3339(),
                    e.crowd_content.as_deref().unwrap_or("")
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Rules {} (match ratio {}), seed {}",
            self.audit.rules.version, self.audit.rules.match_ratio, self.audit.seed
        );
        for (k, v) in &self.audit.model {
            let _ = writeln!(s, "  {k} = {v}");
        }
        s
    }

    /// One row per confirmed entity.
    pub fn confirmed_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attack", "perspective", "entity", "marks", "model_score", "promoted"])
            .expect("in-memory write");
        for c in self.confirmed() {
            let marks: Vec<String> = c
                .marks
                .iter()
                .map(|m| serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
                .collect();
            w.write_record([
                c.attack.to_string(),
                c.perspective.to_string(),
                c.entity.clone(),
                marks.join(";"),
                format!("{}", c.model_score),
                c.promoted.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Mark;
    use chrono::TimeZone;

    fn audit() -> AuditTrail {
        AuditTrail {
            seed: 1,
            rules: RuleSet::default(),
            thresholds: BTreeMap::new(),
            normalization: BTreeMap::new(),
            bo_traces: BTreeMap::new(),
            model: BTreeMap::new(),
            correction: CorrectionConfig::default(),
            ingest: None,
        }
    }

    fn window() -> WindowSpec {
        WindowSpec::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), 86_400, 3600).unwrap()
    }

    #[test]
    fn empty_report_keeps_audit() {
        let r = summarize(vec![], vec![], window(), audit());
        assert!(r.attacks.values().all(|s| s.ips.is_empty() && s.nodes.is_empty()));
        assert_eq!(r.audit.rules.rules.len(), RuleSet::default().rules.len());
        assert!(r.render_text().contains("0 candidates"));
        assert_eq!(r.confirmed_csv().lines().count(), 1);
    }

    #[test]
    fn counts_conserve_candidates() {
        let mut cands = Vec::new();
        for i in 0..3 {
            let mut c = AnomalyCandidate::new(&format!("10.0.0.{i}"), Perspective::Ip, Attack::Dos, vec![], 0.9);
            c.add_mark(Mark::CrossNode, "n");
            c.add_mark(Mark::Temporal, "t");
            c.confirm("ok");
            cands.push(c);
        }
        let mut d = AnomalyCandidate::new("n9", Perspective::Node, Attack::Cpa, vec![], 0.6);
        d.demote(DemotionReason::NoCrossLink, "alone");
        cands.push(d);
        let r = summarize(cands, vec![], window(), audit());
        assert_eq!(r.attacks[&Attack::Dos].ips.len(), 3);
        assert_eq!(r.counts.malicious_ips[&Attack::Dos], 3);
        assert_eq!(r.counts.confirmed + r.counts.demoted, r.counts.candidates);
        assert!(r.confirmed_csv().contains("DOS,ip,10.0.0.1,cross_node;temporal"));
    }
}
