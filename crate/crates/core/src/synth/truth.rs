use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::correct::ForensicReport;
use crate::detect::{Attack, Status};
use crate::perspectives::Perspective;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub label: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

/// What was injected, for scoring a report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub malicious_ips: BTreeMap<Attack, BTreeSet<String>>,
    /// Polluting contents.
    pub abnormal_contents: BTreeSet<String>,
    pub compromised_nodes: BTreeMap<Attack, BTreeSet<String>>,
    pub attack_intervals: Vec<Interval>,
    pub crowd_intervals: Vec<Interval>,
    /// Benign participants of crowd events; none may be confirmed.
    pub crowd_ips: BTreeSet<String>,
    pub crowd_contents: BTreeSet<String>,
    pub crowd_nodes: BTreeSet<String>,
}

impl GroundTruth {
    pub fn merge(&mut self, other: GroundTruth) {
        for (a, s) in other.malicious_ips {
            self.malicious_ips.entry(a).or_default().extend(s);
        }
        for (a, s) in other.compromised_nodes {
            self.compromised_nodes.entry(a).or_default().extend(s);
        }
        self.abnormal_contents.extend(other.abnormal_contents);
        self.attack_intervals.extend(other.attack_intervals);
        self.crowd_intervals.extend(other.crowd_intervals);
        self.crowd_ips.extend(other.crowd_ips);
        self.crowd_contents.extend(other.crowd_contents);
        self.crowd_nodes.extend(other.crowd_nodes);
    }

    pub fn is_empty(&self) -> bool {
        *self == GroundTruth::default()
    }

    /// Each injected entity sits in one category and no crowd participant
    /// is malicious.
    pub fn check(&self) -> Result<(), String> {
        let mut seen: BTreeMap<String, &str> = BTreeMap::new();
        let mut claim = |key: String, cat: &'static str| match seen.insert(key.clone(), cat) {
            Some(prev) => Err(format!("{key} is both {prev} and {cat}")),
            None => Ok(()),
        };
        for (a, s) in &self.malicious_ips {
            let cat = if *a == Attack::Dos { "dos ip" } else { "cpa ip" };
            for ip in s {
                claim(format!("ip:{ip}"), cat)?;
            }
        }
        for (a, s) in &self.compromised_nodes {
            let cat = if *a == Attack::Dos { "dos node" } else { "cpa node" };
            for n in s {
                claim(format!("node:{n}"), cat)?;
            }
        }
        for c in &self.abnormal_contents {
            claim(format!("content:{c}"), "cpa content")?;
        }
        for ip in &self.crowd_ips {
            claim(format!("ip:{ip}"), "crowd ip")?;
        }
        for c in &self.crowd_contents {
            claim(format!("content:{c}"), "crowd content")?;
        }
        for n in &self.crowd_nodes {
            claim(format!("node:{n}"), "crowd node")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    /// Precision is 1.0 on an empty prediction set, recall 1.0 on an empty truth set.
    pub fn from_sets(predicted: &BTreeSet<String>, truth: &BTreeSet<String>) -> Self {
        let tp = predicted.intersection(truth).count();
        let fp = predicted.len() - tp;
        let fnn = truth.len() - tp;
        let precision = if predicted.is_empty() { 1.0 } else { tp as f64 / predicted.len() as f64 };
        let recall = if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        ClassScore {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fnn,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    /// `dos_ip`, `cpa_ip`, `cpa_content`, `dos_node`, `cpa_node`.
    pub classes: BTreeMap<String, ClassScore>,
    /// Crowd-event entities the report confirmed.
    pub crowd_false_positives: usize,
}

impl TruthScore {
    pub fn min_precision(&self) -> f64 {
        self.classes.values().map(|c| c.precision).fold(1.0, f64::min)
    }

    pub fn min_recall(&self) -> f64 {
        self.classes.values().map(|c| c.recall).fold(1.0, f64::min)
    }
}

pub fn score_against_truth(report: &ForensicReport, truth: &GroundTruth) -> TruthScore {
    let confirmed = |attack: Attack, p: Perspective| -> BTreeSet<String> {
        report
            .candidates
            .iter()
            .filter(|c| c.status == Status::Confirmed && c.attack == attack && c.perspective == p)
            .map(|c| c.entity.clone())
            .collect()
    };
    let empty = BTreeSet::new();
    let get = |m: &BTreeMap<Attack, BTreeSet<String>>, a: Attack| m.get(&a).cloned().unwrap_or_default();
    let mut classes = BTreeMap::new();
    classes.insert(
        "dos_ip".to_string(),
        ClassScore::from_sets(&confirmed(Attack::Dos, Perspective::Ip), &get(&truth.malicious_ips, Attack::Dos)),
    );
    classes.insert(
        "cpa_ip".to_string(),
        ClassScore::from_sets(&confirmed(Attack::Cpa, Perspective::Ip), &get(&truth.malicious_ips, Attack::Cpa)),
    );
    classes.insert(
        "cpa_content".to_string(),
        ClassScore::from_sets(&confirmed(Attack::Cpa, Perspective::Content), &truth.abnormal_contents),
    );
    classes.insert(
        "dos_node".to_string(),
        ClassScore::from_sets(&confirmed(Attack::Dos, Perspective::Node), &get(&truth.compromised_nodes, Attack::Dos)),
    );
    classes.insert(
        "cpa_node".to_string(),
        ClassScore::from_sets(&confirmed(Attack::Cpa, Perspective::Node), &get(&truth.compromised_nodes, Attack::Cpa)),
    );
    let crowd_false_positives = report
        .candidates
        .iter()
        .filter(|c| c.status == Status::Confirmed)
        .filter(|c| {
            let set = match c.perspective {
                Perspective::Ip => &truth.crowd_ips,
                Perspective::Content => &truth.crowd_contents,
                Perspective::Node => &truth.crowd_nodes,
                Perspective::Offering => &empty,
            };
            set.contains(&c.entity)
        })
        .count();
    TruthScore {
        classes,
        crowd_false_positives,
    }
}
