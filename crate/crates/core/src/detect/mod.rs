//! Typing numerically anomalous entities as DoS or cache-pollution suspects.

pub mod candidate;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use candidate::{
    entity_key, AnomalyCandidate, DemotionReason, Mark, RuleEvidence, Status, Threshold, CROWD_SUSPECT,
};
pub use rules::{Attack, Direction, PatternRule, RuleSet, DEFAULT_MATCH_RATIO, DEFAULT_MIN_CONFIDENCE, DEFAULT_QUANTILE};

use crate::gmm::ClusterAssignment;
use crate::perspectives::{Perspective, PerspectiveTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("thresholds need at least 4 values, got {0}")]
    TooFewValues(usize),
    #[error("rule refers to unknown {perspective} feature {feature:?}")]
    UnknownFeature { perspective: Perspective, feature: String },
    #[error("quantile {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("invalid rule set: {0}")]
    InvalidConfig(String),
    #[error("assignment covers {found} rows but the table has {expected}")]
    AssignmentMismatch { expected: usize, found: usize },
}

/// Linear-interpolation quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Population cut-off(s) for a direction: the `q` quantile for lower-tail
/// directions, the `1 - q` quantile for upper-tail ones, both for two-sided.
pub fn robust_threshold(values: &[f64], direction: Direction, q: f64) -> Result<Threshold, DetectError> {
    if values.len() < 4 {
        return Err(DetectError::TooFewValues(values.len()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(DetectError::InvalidQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Threshold {
        lower: direction.lower_tail().then(|| quantile(&sorted, q)),
        upper: direction.upper_tail().then(|| quantile(&sorted, 1.0 - q)),
    })
}

/// One rule resolved against a table: column index and cut-offs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCut {
    pub rule: PatternRule,
    pub feature_index: usize,
    pub threshold: Threshold,
}

/// Resolve every rule of the table's perspective.
pub fn thresholds_for(table: &PerspectiveTable, rules: &RuleSet) -> Result<Vec<RuleCut>, DetectError> {
    rules
        .for_perspective(table.perspective)
        .map(|rule| {
            let idx = table.feature_index(&rule.feature).ok_or_else(|| DetectError::UnknownFeature {
                perspective: table.perspective,
                feature: rule.feature.clone(),
            })?;
            Ok(RuleCut {
                rule: rule.clone(),
                feature_index: idx,
                threshold: robust_threshold(&table.column(idx), rule.direction, rule.quantile)?,
            })
        })
        .collect()
}

pub fn evaluate(cuts: &[RuleCut], row: &[f64]) -> Vec<RuleEvidence> {
    cuts.iter()
        .map(|c| {
            let observed = row[c.feature_index];
            RuleEvidence {
                rule: c.rule.id(),
                feature: c.rule.feature.clone(),
                direction: c.rule.direction,
                attack: c.rule.attack,
                quantile: c.rule.quantile,
                threshold: c.threshold,
                observed,
                satisfied: c.threshold.beyond(observed),
            }
        })
        .collect()
}

/// Share of `attack`'s rules satisfied, or `None` when the attack has none.
pub fn match_share(evidence: &[RuleEvidence], attack: Attack) -> Option<f64> {
    let total = evidence.iter().filter(|e| e.attack == attack).count();
    if total == 0 {
        return None;
    }
    let hit = evidence.iter().filter(|e| e.attack == attack && e.satisfied).count();
    Some(hit as f64 / total as f64)
}

/// DoS first, then CPA; `None` when neither reaches the ratio.
pub fn classify(evidence: &[RuleEvidence], match_ratio: f64, allowed: &[Attack]) -> Option<Attack> {
    [Attack::Dos, Attack::Cpa]
        .into_iter()
        .filter(|a| allowed.contains(a))
        .find(|&a| match_share(evidence, a).is_some_and(|s| s >= match_ratio - 1e-12))
}

fn centroids(table: &PerspectiveTable, assignment: &ClusterAssignment) -> BTreeMap<usize, Vec<f64>> {
    let d = table.n_features();
    let mut sums: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (row, &c) in table.values.iter().zip(&assignment.clusters) {
        let e = sums.entry(c).or_insert_with(|| (0, vec![0.0; d]));
        e.0 += 1;
        for (s, v) in e.1.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.into_iter()
        .map(|(c, (n, s))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

/// Per-cluster verdict, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub cluster: usize,
    pub size: usize,
    pub centroid: Vec<f64>,
    pub attack: Option<Attack>,
    pub dos_share: Option<f64>,
    pub cpa_share: Option<f64>,
}

fn label_clusters(
    table: &PerspectiveTable,
    assignment: &ClusterAssignment,
    rules: &RuleSet,
    allowed: &[Attack],
) -> Result<(Vec<AnomalyCandidate>, Vec<ClusterVerdict>), DetectError> {
    if assignment.len() != table.n_rows() {
        return Err(DetectError::AssignmentMismatch {
            expected: table.n_rows(),
            found: assignment.len(),
        });
    }
    let cuts = thresholds_for(table, rules)?;
    let mut out = Vec::new();
    let mut verdicts = Vec::new();
    for (cluster, centroid) in centroids(table, assignment) {
        let evidence = evaluate(&cuts, &centroid);
        let attack = classify(&evidence, rules.match_ratio, allowed);
        let members = assignment.members(cluster);
        verdicts.push(ClusterVerdict {
            cluster,
            size: members.len(),
            dos_share: match_share(&evidence, Attack::Dos),
            cpa_share: match_share(&evidence, Attack::Cpa),
            centroid,
            attack,
        });
        let Some(attack) = attack else { continue };
        for i in members {
            let conf = assignment.confidences[i];
            if conf < rules.min_confidence {
                continue;
            }
            let mut c = AnomalyCandidate::new(&table.keys[i], table.perspective, attack, evidence.clone(), conf);
            c.cluster = Some(cluster);
            out.push(c);
        }
    }
    out.sort_by(|a, b| a.entity.cmp(&b.entity));
    Ok((out, verdicts))
}

/// Client-IP clusters whose centroid matches a DoS or CPA pattern.
pub fn label_ip_clusters(
    table: &PerspectiveTable,
    assignment: &ClusterAssignment,
    rules: &RuleSet,
) -> Result<Vec<AnomalyCandidate>, DetectError> {
    label_clusters(table, assignment, rules, &[Attack::Dos, Attack::Cpa]).map(|r| r.0)
}

/// Content clusters; only cache pollution applies to contents.
pub fn label_content_clusters(
    table: &PerspectiveTable,
    assignment: &ClusterAssignment,
    rules: &RuleSet,
) -> Result<Vec<AnomalyCandidate>, DetectError> {
    label_clusters(table, assignment, rules, &[Attack::Cpa]).map(|r| r.0)
}

/// Same as the two labelers above, also returning per-cluster verdicts.
pub fn label_clusters_with_verdicts(
    table: &PerspectiveTable,
    assignment: &ClusterAssignment,
    rules: &RuleSet,
) -> Result<(Vec<AnomalyCandidate>, Vec<ClusterVerdict>), DetectError> {
    let allowed: &[Attack] = match table.perspective {
        Perspective::Content => &[Attack::Cpa],
        _ => &[Attack::Dos, Attack::Cpa],
    };
    label_clusters(table, assignment, rules, allowed)
}

/// Type each iForest-flagged node; nodes matching neither pattern stay UNKNOWN.
pub fn label_outlier_nodes(
    table: &PerspectiveTable,
    flagged: &BTreeSet<String>,
    scores: &BTreeMap<String, f64>,
    rules: &RuleSet,
) -> Result<Vec<AnomalyCandidate>, DetectError> {
    let cuts = thresholds_for(table, rules)?;
    let mut out = Vec::new();
    for key in flagged {
        let Some(i) = table.row_index(key) else { continue };
        let evidence = evaluate(&cuts, &table.values[i]);
        let attack = classify(&evidence, rules.match_ratio, &[Attack::Dos, Attack::Cpa]).unwrap_or(Attack::Unknown);
        let score = scores.get(key).copied().unwrap_or(0.0);
        out.push(AnomalyCandidate::new(key, table.perspective, attack, evidence, score));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(p: Perspective, names: &[&str], rows: Vec<Vec<f64>>) -> PerspectiveTable {
        PerspectiveTable {
            perspective: p,
            keys: (0..rows.len()).map(|i| format!("e{i:02}")).collect(),
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            values: rows,
            request_counts: vec![],
            side_data: BTreeMap::new(),
        }
    }

    #[test]
    fn interpolated_thresholds() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let lo = robust_threshold(&v, Direction::Low, 0.1).unwrap();
        assert!((lo.lower.unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(lo.upper, None);
        let hi = robust_threshold(&v, Direction::High, 0.1).unwrap();
        assert!((hi.upper.unwrap() - 9.1).abs() < 1e-12);
        let eq = robust_threshold(&[2.0; 6], Direction::Low, 0.1).unwrap();
        assert_eq!(eq.lower, Some(2.0));
        assert!(!eq.beyond(2.0));
        assert_eq!(robust_threshold(&[1.0, 2.0, 3.0], Direction::Low, 0.1), Err(DetectError::TooFewValues(3)));
    }

    fn node_table() -> PerspectiveTable {
        let names = crate::perspectives::NODE_FEATURES;
        let normal = vec![0.7, 0.7, 0.5, 0.05, 0.5, 0.3, 0.3];
        let mut rows = vec![normal.clone(); 8];
        for (i, r) in rows.iter_mut().enumerate() {
            r[0] += i as f64 * 0.01;
            r[4] += i as f64 * 0.01;
        }
        // dos: low hit, low legit, low transfer, high error
        rows.push(vec![0.1, 0.1, 0.05, 0.9, 0.45, 0.3, 0.3]);
        // cpa: low hit, low legit, low popularity, normal error
        rows.push(vec![0.2, 0.2, 0.5, 0.05, 0.05, 0.3, 0.3]);
        // odd but matches nothing
        rows.push(vec![0.72, 0.72, 0.5, 0.05, 0.52, 0.9, 0.9]);
        table(Perspective::Node, &names, rows)
    }

    #[test]
    fn outlier_nodes_are_typed() {
        let t = node_table();
        let flagged: BTreeSet<String> = ["e08", "e09", "e10"].iter().map(|s| s.to_string()).collect();
        let cands = label_outlier_nodes(&t, &flagged, &BTreeMap::new(), &RuleSet::default()).unwrap();
        let by: BTreeMap<&str, Attack> = cands.iter().map(|c| (c.entity.as_str(), c.attack)).collect();
        assert_eq!(by["e08"], Attack::Dos);
        assert_eq!(by["e10"], Attack::Unknown);
        assert!(cands.iter().all(|c| c.evidence.len() == 8));
        // the cpa node is above the 10% quantile on hit rate in an 11-row table, so widen q
        let wide = RuleSet::default().with_quantile(0.2);
        let cands = label_outlier_nodes(&t, &flagged, &BTreeMap::new(), &wide).unwrap();
        assert_eq!(cands.iter().find(|c| c.entity == "e09").unwrap().attack, Attack::Cpa);
    }

    #[test]
    fn clusters_below_ratio_yield_nothing() {
        let names = crate::perspectives::IP_FEATURES;
        let mut rows = vec![vec![0.1, 0.5, 0.8, 0.5, 0.2, 0.2, 0.5, 0.7, 0.02, 0.3]; 12];
        for (i, r) in rows.iter_mut().enumerate() {
            r[0] += i as f64 * 0.001;
        }
        rows[11] = vec![1.0, 0.5, 0.8, 0.5, 0.2, 0.2, 0.5, 0.7, 0.02, 0.3];
        let t = table(Perspective::Ip, &names, rows);
        let n = t.n_rows();
        let assignment = ClusterAssignment {
            clusters: (0..n).map(|i| usize::from(i == 11)).collect(),
            responsibilities: vec![vec![1.0, 0.0]; n],
            confidences: vec![1.0; n],
        };
        assert!(label_ip_clusters(&t, &assignment, &RuleSet::default()).unwrap().is_empty());
    }
}
