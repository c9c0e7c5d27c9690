use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::rules::{Attack, Direction};
use crate::perspectives::Perspective;

/// Cut-offs for one rule; a value is beyond when strictly outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upper: Option<f64>,
}

impl Threshold {
    pub fn beyond(&self, v: f64) -> bool {
        self.lower.is_some_and(|t| v < t) || self.upper.is_some_and(|t| v > t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEvidence {
    pub rule: String,
    pub feature: String,
    pub direction: Direction,
    pub attack: Attack,
    pub quantile: f64,
    pub threshold: Threshold,
    pub observed: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Preliminary,
    Confirmed,
    Demoted,
}

/// Independent kinds of supporting evidence; each counts once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    CrossNode,
    CrossIp,
    CrossContent,
    Temporal,
    OfferingMismatch,
}

impl Mark {
    pub fn cross(p: Perspective) -> Option<Mark> {
        match p {
            Perspective::Node => Some(Mark::CrossNode),
            Perspective::Ip => Some(Mark::CrossIp),
            Perspective::Content => Some(Mark::CrossContent),
            Perspective::Offering => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemotionReason {
    /// No link to a candidate of another perspective.
    NoCrossLink,
    /// Explained by a declared test or maintenance offering.
    BenignOffering,
    /// Looks like a flash crowd and nothing contradicts that.
    CrowdEvent,
    InsufficientCorroboration,
}

impl fmt::Display for DemotionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemotionReason::NoCrossLink => "no cross-perspective link",
            DemotionReason::BenignOffering => "benign test/maintenance offering",
            DemotionReason::CrowdEvent => "crowd event",
            DemotionReason::InsufficientCorroboration => "insufficient corroboration",
        })
    }
}

pub const CROWD_SUSPECT: &str = "crowd_event_suspect";

/// One flagged entity and everything that happened to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCandidate {
    pub entity: String,
    pub perspective: Perspective,
    pub attack: Attack,
    /// Every rule of the perspective with its threshold and observed value.
    pub evidence: Vec<RuleEvidence>,
    /// GMM confidence or iForest score.
    pub model_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub status: Status,
    #[serde(default)]
    pub marks: BTreeSet<Mark>,
    /// `perspective:entity` → request weight, filled by correction.
    #[serde(default)]
    pub linked: BTreeMap<String, u64>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub promoted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demotion: Option<DemotionReason>,
    /// Ordered notes from each correction step.
    #[serde(default)]
    pub trail: Vec<String>,
}

impl AnomalyCandidate {
    pub fn new(entity: &str, perspective: Perspective, attack: Attack, evidence: Vec<RuleEvidence>, model_score: f64) -> Self {
        AnomalyCandidate {
            entity: entity.to_string(),
            perspective,
            attack,
            evidence,
            model_score,
            cluster: None,
            status: Status::Preliminary,
            marks: BTreeSet::new(),
            linked: BTreeMap::new(),
            tags: BTreeSet::new(),
            promoted: false,
            demotion: None,
            trail: Vec::new(),
        }
    }

    pub fn key(&self) -> String {
        entity_key(self.perspective, &self.entity)
    }

    pub fn is_open(&self) -> bool {
        self.status == Status::Preliminary
    }

    pub fn add_mark(&mut self, mark: Mark, why: impl Into<String>) -> bool {
        let added = self.marks.insert(mark);
        if added {
            self.trail.push(why.into());
        }
        added
    }

    /// PRELIMINARY → CONFIRMED; no-op on settled candidates.
    pub fn confirm(&mut self, why: impl Into<String>) {
        if self.is_open() {
            self.status = Status::Confirmed;
            self.trail.push(why.into());
        }
    }

    /// PRELIMINARY → DEMOTED; no-op on settled candidates.
    pub fn demote(&mut self, reason: DemotionReason, why: impl Into<String>) {
        if self.is_open() {
            self.status = Status::Demoted;
            self.demotion = Some(reason);
            self.trail.push(why.into());
        }
    }

    pub fn satisfied_rules(&self) -> impl Iterator<Item = &RuleEvidence> {
        self.evidence.iter().filter(|e| e.satisfied)
    }
}

pub fn entity_key(p: Perspective, entity: &str) -> String {
    format!("{p}:{entity}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_only_leaves_preliminary_once() {
        let mut c = AnomalyCandidate::new("n1", Perspective::Node, Attack::Dos, vec![], 0.7);
        c.confirm("ok");
        c.demote(DemotionReason::NoCrossLink, "late");
        assert_eq!(c.status, Status::Confirmed);
        assert_eq!(c.demotion, None);
        assert_eq!(c.trail, vec!["ok"]);
    }

    #[test]
    fn marks_count_once_per_kind() {
        let mut c = AnomalyCandidate::new("1.2.3.4", Perspective::Ip, Attack::Cpa, vec![], 0.9);
        assert!(c.add_mark(Mark::CrossNode, "a"));
        assert!(!c.add_mark(Mark::CrossNode, "b"));
        assert_eq!(c.marks.len(), 1);
        assert_eq!(c.key(), "ip:1.2.3.4");
    }

    #[test]
    fn two_sided_threshold() {
        let t = Threshold {
            lower: Some(1.0),
            upper: Some(3.0),
        };
        assert!(t.beyond(0.5) && t.beyond(3.5));
        assert!(!t.beyond(1.0) && !t.beyond(3.0));
    }
}
