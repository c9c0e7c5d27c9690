use std::collections::{BTreeMap, HashMap};

use super::graph::LinkGraph;
use super::CorrectionConfig;
use crate::detect::{AnomalyCandidate, Attack, DemotionReason, Mark, RuleEvidence};
use crate::perspectives::Perspective;

fn perspective_of(key: &str) -> Option<Perspective> {
    key.split_once(':').and_then(|(p, _)| p.parse().ok())
}

fn entity_of(key: &str) -> &str {
    key.split_once(':').map_or(key, |(_, e)| e)
}

/// Rule (a): same-attack candidates linked by at least the minimum weight
/// corroborate each other. Returns whether any mark was added.
fn mark_same_type_links(cands: &mut [AnomalyCandidate], index: &HashMap<String, usize>, graph: &LinkGraph, min_w: u64) -> bool {
    let mut pairs = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        if !c.is_open() || c.attack == Attack::Unknown {
            continue;
        }
        for (nk, w) in graph.neighbors(&c.key()) {
            if w < min_w {
                continue;
            }
            let Some(&j) = index.get(nk) else { continue };
            let other = &cands[j];
            let linkable = matches!(
                (c.perspective, other.perspective),
                (Perspective::Ip, Perspective::Node)
                    | (Perspective::Content, Perspective::Node)
                    | (Perspective::Ip, Perspective::Content)
            );
            if linkable && other.is_open() && other.attack == c.attack {
                pairs.push((i, j, w));
            }
        }
    }
    let mut changed = false;
    for (i, j, w) in pairs {
        let (pi, pj) = (cands[i].perspective, cands[j].perspective);
        let (ki, kj) = (cands[i].key(), cands[j].key());
        let attack = cands[i].attack;
        if let Some(m) = Mark::cross(pj) {
            changed |= cands[i].add_mark(m, format!("{attack} link to {kj} ({w} requests)"));
        }
        if let Some(m) = Mark::cross(pi) {
            changed |= cands[j].add_mark(m, format!("{attack} link to {ki} ({w} requests)"));
        }
    }
    changed
}

/// Rule (c): a node fed by enough corroborated malicious IPs of one type
/// becomes a candidate of that type (DoS first).
fn promote_nodes(
    cands: &mut Vec<AnomalyCandidate>,
    index: &mut HashMap<String, usize>,
    graph: &LinkGraph,
    node_evidence: &BTreeMap<String, Vec<RuleEvidence>>,
    cfg: &CorrectionConfig,
) -> bool {
    let mut fan_in: BTreeMap<String, BTreeMap<Attack, usize>> = BTreeMap::new();
    for c in cands.iter() {
        if c.perspective != Perspective::Ip || !c.is_open() || c.attack == Attack::Unknown || c.marks.is_empty() {
            continue;
        }
        for (nk, w) in graph.neighbors(&c.key()) {
            if w >= cfg.min_link_weight && perspective_of(nk) == Some(Perspective::Node) {
                *fan_in.entry(nk.to_string()).or_default().entry(c.attack).or_default() += 1;
            }
        }
    }
    let mut changed = false;
    for (node_key, counts) in fan_in {
        let Some(attack) = [Attack::Dos, Attack::Cpa]
            .into_iter()
            .find(|a| counts.get(a).copied().unwrap_or(0) >= cfg.promotion_fan_in)
        else {
            continue;
        };
        let n = counts[&attack];
        let why = format!("promoted to {attack}: {n} corroborated {attack} IPs");
        match index.get(&node_key) {
            Some(&j) => {
                let c = &mut cands[j];
                if c.is_open() && c.attack == Attack::Unknown {
                    c.attack = attack;
                    c.promoted = true;
                    c.trail.push(why);
                    changed = true;
                }
            }
            None => {
                let entity = entity_of(&node_key);
                let evidence = node_evidence.get(entity).cloned().unwrap_or_default();
                let mut c = AnomalyCandidate::new(entity, Perspective::Node, attack, evidence, 0.0);
                c.promoted = true;
                c.trail.push(why);
                index.insert(node_key, cands.len());
                cands.push(c);
                changed = true;
            }
        }
    }
    changed
}

/// Cross-perspective validation.
///
/// Rules (a) and (c) run to a fixed point, then rule (b) demotes every
/// still-open candidate without a link to a candidate of another
/// perspective. `node_evidence` supplies rule evidence for promoted nodes.
pub fn cross_perspective_validate(
    mut cands: Vec<AnomalyCandidate>,
    graph: &LinkGraph,
    node_evidence: &BTreeMap<String, Vec<RuleEvidence>>,
    cfg: &CorrectionConfig,
) -> Vec<AnomalyCandidate> {
    let mut index: HashMap<String, usize> = cands.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
    loop {
        let a = mark_same_type_links(&mut cands, &index, graph, cfg.min_link_weight);
        let c = promote_nodes(&mut cands, &mut index, graph, node_evidence, cfg);
        if !a && !c {
            break;
        }
    }

    let mut demote = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        let mut any = false;
        for (nk, w) in graph.neighbors(&c.key()) {
            let Some(&j) = index.get(nk) else { continue };
            if cands[j].perspective != c.perspective && w >= cfg.min_link_weight {
                any = true;
            }
        }
        if c.is_open() && !any {
            demote.push(i);
        }
    }
    for i in demote {
        cands[i].demote(DemotionReason::NoCrossLink, "no link to a candidate of another perspective");
    }

    for c in cands.iter_mut() {
        let key = c.key();
        c.linked = graph
            .neighbors(&key)
            .filter(|(nk, _)| index.contains_key(*nk))
            .map(|(nk, w)| (nk.to_string(), w))
            .collect();
    }
    cands.sort_by(|a, b| (a.perspective, &a.entity).cmp(&(b.perspective, &b.entity)));
    cands
}

/// Evidence for every node, keyed by node id; used when promoting.
pub fn node_evidence_map(
    table: &crate::perspectives::PerspectiveTable,
    cuts: &[crate::detect::RuleCut],
) -> BTreeMap<String, Vec<RuleEvidence>> {
    table
        .keys
        .iter()
        .zip(&table.values)
        .map(|(k, row)| (k.clone(), crate::detect::evaluate(cuts, row)))
        .collect()
}
