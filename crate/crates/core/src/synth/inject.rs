use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};

use chrono::DateTime;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::truth::{GroundTruth, Interval};
use super::workload::{Content, Origin, Pressure, Request, Workload, CLASSES};
use crate::detect::Attack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DosConfig {
    pub attackers: usize,
    pub target_nodes: usize,
    /// Seconds after the workload start.
    pub start_offset_secs: i64,
    pub duration_secs: i64,
    /// Attack rate per target relative to the mean per-node benign rate.
    pub rate_multiplier: f64,
    /// Share of attack requests aimed at missing live paths (404).
    pub error_share: f64,
    /// Distinct missing paths per target.
    pub fake_paths_per_target: usize,
    /// Share of the target cache evicted every attack second.
    pub evict_share: f64,
    /// Delivery-time multiplier on targets during the attack.
    pub slowdown: u64,
}

impl Default for DosConfig {
    fn default() -> Self {
        DosConfig {
            attackers: 20,
            target_nodes: 2,
            start_offset_secs: 10 * 3600,
            duration_secs: 3600,
            rate_multiplier: 50.0,
            error_share: 0.8,
            fake_paths_per_target: 25,
            evict_share: 0.1,
            slowdown: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpaConfig {
    pub attackers: usize,
    pub polluting_contents: usize,
    pub target_nodes: usize,
    pub requests_per_attacker: usize,
    pub start_offset_secs: i64,
    pub duration_secs: i64,
}

impl Default for CpaConfig {
    fn default() -> Self {
        CpaConfig {
            attackers: 10,
            polluting_contents: 15,
            target_nodes: 1,
            requests_per_attacker: 2000,
            start_offset_secs: 14 * 3600,
            duration_secs: 6 * 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    /// Distinct existing clients, one request each.
    pub ips: usize,
    /// Popularity rank of the content (1 = most popular); the first
    /// content at or below this rank on a non-target node is used.
    pub content_rank: usize,
    pub start_offset_secs: i64,
    pub duration_secs: i64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        CrowdConfig {
            ips: 5000,
            content_rank: 3,
            start_offset_secs: 4 * 3600,
            duration_secs: 1800,
        }
    }
}

fn attacker_ip(second_octet: u8, i: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(172, second_octet, (i / 250) as u8, (i % 250 + 1) as u8))
}

fn interval(w: &Workload, label: &str, offset: i64, duration: i64) -> (i64, i64, Interval) {
    let start = w.config.start_secs() + offset.clamp(0, w.config.duration_secs - 1);
    let end = (start + duration.max(1)).min(w.config.start_secs() + w.config.duration_secs);
    let iv = Interval {
        label: label.to_string(),
        start: DateTime::from_timestamp(start, 0).expect("in range"),
        end: DateTime::from_timestamp(end, 0).expect("in range"),
    };
    (start, end, iv)
}

fn taken_nodes(w: &Workload) -> BTreeSet<u16> {
    w.truth
        .compromised_nodes
        .values()
        .chain(std::iter::once(&w.truth.crowd_nodes))
        .flatten()
        .filter_map(|n| w.node_index(n))
        .collect()
}

fn pick_nodes(w: &Workload, n: usize, rng: &mut impl Rng) -> Vec<u16> {
    let taken = taken_nodes(w);
    let free: Vec<u16> = (0..w.nodes.len() as u16).filter(|i| !taken.contains(i)).collect();
    let n = n.min(free.len());
    let mut picked: Vec<u16> = sample(rng, free.len(), n).into_iter().map(|i| free[i]).collect();
    picked.sort_unstable();
    picked
}

/// Attackers flood the target nodes with requests, mostly for missing live
/// paths routed through a static offering; targets suffer cache eviction
/// and slow delivery for the duration.
pub fn inject_dos(w: &mut Workload, cfg: &DosConfig) -> GroundTruth {
    let mut delta = GroundTruth::default();
    if cfg.attackers == 0 || cfg.target_nodes == 0 || cfg.duration_secs <= 0 {
        return delta;
    }
    let mut rng = w.rng(10);
    let targets = pick_nodes(w, cfg.target_nodes, &mut rng);
    if targets.is_empty() {
        return delta;
    }
    let (start, end, iv) = interval(w, "DOS", cfg.start_offset_secs, cfg.duration_secs);
    let attackers: Vec<u32> = (0..cfg.attackers).map(|i| w.add_ip(attacker_ip(16, i), "bot")).collect();
    let static_offering = w.offerings_of_class(0)[0];
    let live = CLASSES.iter().position(|c| c.0 == "live").unwrap_or(0);
    let per_target = (cfg.rate_multiplier * w.config.per_node_rate() * (end - start) as f64).round() as usize;
    for &node in &targets {
        let name = w.nodes[node as usize].clone();
        let fake: Vec<u32> = (0..cfg.fake_paths_per_target.max(1))
            .map(|k| {
                w.add_content(Content {
                    path: format!("/live/{name}/ch{k:03}.m3u8"),
                    class: live,
                    service_type: "live",
                    offering: static_offering,
                    node,
                    size: 0,
                    exists: false,
                })
            })
            .collect();
        let real: Vec<u32> = (0..w.contents.len() as u32)
            .filter(|&c| {
                let c = &w.contents[c as usize];
                c.node == node && c.exists
            })
            .collect();
        for _ in 0..per_target {
            let t = rng.random_range(start..end);
            let ip = attackers[rng.random_range(0..attackers.len())];
            let (content, status) = if real.is_empty() || rng.random::<f64>() < cfg.error_share {
                (fake[rng.random_range(0..fake.len())], 404)
            } else {
                (real[rng.random_range(0..real.len())], 200)
            };
            w.requests.push(Request {
                t,
                ip,
                content,
                status,
                jitter: rng.random(),
                origin: Origin::Dos,
            });
        }
        w.pressure.push(Pressure {
            node,
            start,
            end,
            evict_per_sec: (cfg.evict_share * w.config.cache_capacity as f64).ceil() as usize,
            slowdown: cfg.slowdown.max(1),
        });
        delta.compromised_nodes.entry(Attack::Dos).or_default().insert(name);
    }
    delta.malicious_ips.insert(
        Attack::Dos,
        attackers.iter().map(|&i| w.ips[i as usize].to_string()).collect(),
    );
    delta.attack_intervals.push(iv);
    w.truth.merge(delta.clone());
    delta
}

/// Attackers repeatedly request fresh unpopular contents placed on the
/// target nodes, keeping them resident and squeezing legitimate content out.
pub fn inject_cpa(w: &mut Workload, cfg: &CpaConfig) -> GroundTruth {
    let mut delta = GroundTruth::default();
    if cfg.attackers == 0 || cfg.polluting_contents == 0 || cfg.target_nodes == 0 || cfg.duration_secs <= 0 {
        return delta;
    }
    let mut rng = w.rng(11);
    let targets = pick_nodes(w, cfg.target_nodes, &mut rng);
    if targets.is_empty() {
        return delta;
    }
    let (start, end, iv) = interval(w, "CPA", cfg.start_offset_secs, cfg.duration_secs);
    let attackers: Vec<u32> = (0..cfg.attackers).map(|i| w.add_ip(attacker_ip(17, i), "desktop")).collect();
    let offerings = w.offerings_of_class(0);
    let (service, _, prefix, ext, (lo, hi)) = CLASSES[0];
    let polluting: Vec<u32> = (0..cfg.polluting_contents)
        .map(|k| {
            let size = rng.random_range(lo..=hi);
            w.add_content(Content {
                path: format!("{prefix}/archive/x{k:04}.{ext}"),
                class: 0,
                service_type: service,
                offering: offerings[k % offerings.len()],
                node: targets[k % targets.len()],
                size,
                exists: true,
            })
        })
        .collect();
    for &ip in &attackers {
        for _ in 0..cfg.requests_per_attacker {
            let t = rng.random_range(start..end);
            let content = polluting[rng.random_range(0..polluting.len())];
            w.requests.push(Request {
                t,
                ip,
                content,
                status: 200,
                jitter: rng.random(),
                origin: Origin::Cpa,
            });
        }
    }
    delta.malicious_ips.insert(
        Attack::Cpa,
        attackers.iter().map(|&i| w.ips[i as usize].to_string()).collect(),
    );
    delta.abnormal_contents = polluting.iter().map(|&c| w.contents[c as usize].path.clone()).collect();
    delta.compromised_nodes.insert(
        Attack::Cpa,
        targets.iter().map(|&n| w.nodes[n as usize].clone()).collect(),
    );
    delta.attack_intervals.push(iv);
    w.truth.merge(delta.clone());
    delta
}

/// Many existing clients fetch one popular content within a short span.
pub fn inject_crowd_event(w: &mut Workload, cfg: &CrowdConfig) -> GroundTruth {
    let mut delta = GroundTruth::default();
    if cfg.ips == 0 || cfg.duration_secs <= 0 {
        return delta;
    }
    let mut rng = w.rng(12);
    let taken = taken_nodes(w);
    // baseline contents are indexed by popularity rank
    let Some(content) = (cfg.content_rank.max(1) - 1..w.config.contents)
        .map(|i| i as u32)
        .find(|&c| !taken.contains(&w.contents[c as usize].node))
    else {
        return delta;
    };
    let (start, end, iv) = interval(w, "CROWD", cfg.start_offset_secs, cfg.duration_secs);
    let n = cfg.ips.min(w.config.ips);
    let mut ips: Vec<usize> = sample(&mut rng, w.config.ips, n).into_vec();
    ips.sort_unstable();
    for ip in ips {
        let t = rng.random_range(start..end);
        let status = if rng.random::<f64>() < w.config.error_rate { 404 } else { 200 };
        w.requests.push(Request {
            t,
            ip: ip as u32,
            content,
            status,
            jitter: rng.random(),
            origin: Origin::Crowd,
        });
        delta.crowd_ips.insert(w.ips[ip].to_string());
    }
    let c = &w.contents[content as usize];
    delta.crowd_contents.insert(c.path.clone());
    delta.crowd_nodes.insert(w.nodes[c.node as usize].clone());
    delta.crowd_intervals.push(iv);
    w.truth.merge(delta.clone());
    delta
}

#[cfg(test)]
mod tests {
    use super::super::workload::{generate_baseline, WorkloadConfig};
    use super::*;
    use crate::ingest::AccessLogRecord;

    fn base() -> Workload {
        generate_baseline(&WorkloadConfig {
            nodes: 6,
            ips: 400,
            contents: 300,
            offerings: 5,
            duration_secs: 6 * 3600,
            rate: 3.0,
            cache_capacity: 10,
            ..Default::default()
        })
        .unwrap()
    }

    fn hit_rate<'a>(recs: impl Iterator<Item = &'a AccessLogRecord>) -> f64 {
        let (mut n, mut h) = (0usize, 0usize);
        for r in recs {
            n += 1;
            h += usize::from(r.cache_hit.is_hit());
        }
        h as f64 / n.max(1) as f64
    }

    #[test]
    fn zero_attackers_is_identity() {
        let mut w = base();
        let before = w.records();
        let d = inject_dos(&mut w, &DosConfig { attackers: 0, ..Default::default() });
        assert!(d.is_empty());
        let d = inject_cpa(&mut w, &CpaConfig { polluting_contents: 0, ..Default::default() });
        assert!(d.is_empty());
        assert_eq!(w.records(), before);
    }

    #[test]
    fn dos_conserves_and_depresses_target_hits() {
        let mut w = base();
        let n0 = w.len();
        let cfg = DosConfig {
            start_offset_secs: 3 * 3600,
            ..Default::default()
        };
        let d = inject_dos(&mut w, &cfg);
        let added = w.requests.iter().filter(|q| q.origin == Origin::Dos).count();
        assert_eq!(w.len(), n0 + added);
        assert_eq!(w.records().len(), n0 + added);
        let start = w.config.start_secs() + 3 * 3600;
        let target = d.compromised_nodes[&Attack::Dos].iter().next().unwrap().clone();
        let recs = w.records();
        let legit = |r: &&AccessLogRecord| r.node_id == target && r.client_ip.to_string().starts_with("10.");
        let before = hit_rate(recs.iter().filter(legit).filter(|r| r.unix_seconds() < start));
        let during =
            hit_rate(recs.iter().filter(legit).filter(|r| (start..start + 3600).contains(&r.unix_seconds())));
        assert!(during < before, "{during} !< {before}");
        assert!(w.truth.check().is_ok());
    }

    #[test]
    fn cpa_hurts_legitimate_hit_rate_on_targets() {
        let mut w = base();
        let cfg = CpaConfig {
            start_offset_secs: 0,
            duration_secs: 6 * 3600,
            target_nodes: 2,
            ..Default::default()
        };
        let d = inject_cpa(&mut w, &cfg);
        let targets = &d.compromised_nodes[&Attack::Cpa];
        let recs = w.records();
        let legit = recs.iter().filter(|r| r.client_ip.to_string().starts_with("10."));
        let (on, off): (Vec<&AccessLogRecord>, Vec<&AccessLogRecord>) = legit.partition(|r| targets.contains(&r.node_id));
        let gap = hit_rate(off.into_iter()) - hit_rate(on.into_iter());
        assert!(gap >= 0.2, "gap {gap}");
    }

    #[test]
    fn crowd_is_disjoint_from_attackers() {
        let mut w = base();
        inject_dos(&mut w, &DosConfig::default());
        inject_cpa(&mut w, &CpaConfig::default());
        let d = inject_crowd_event(
            &mut w,
            &CrowdConfig {
                ips: 300,
                start_offset_secs: 3600,
                ..Default::default()
            },
        );
        assert_eq!(d.crowd_ips.len(), 300);
        assert!(w.truth.check().is_ok());
        let crowd_node = d.crowd_nodes.iter().next().unwrap();
        assert!(w.truth.compromised_nodes.values().all(|s| !s.contains(crowd_node)));
    }
}
