use std::collections::{BTreeMap, HashSet};
use std::net::{IpAddr, Ipv4Addr};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lru::LruCache;
use super::truth::GroundTruth;
use crate::correct::{ExpectedProfile, OfferingConfig, OfferingSet, Purpose};
use crate::ingest::{AccessLogRecord, CacheStatus, Method, MissingFields};

/// Benign traffic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub nodes: usize,
    pub ips: usize,
    pub contents: usize,
    pub offerings: usize,
    pub start: DateTime<Utc>,
    pub duration_secs: i64,
    /// Mean benign requests per second (Poisson).
    pub rate: f64,
    pub zipf_s: f64,
    /// Per-node LRU capacity in contents; sets the baseline hit rate.
    pub cache_capacity: usize,
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            nodes: 20,
            ips: 10_000,
            contents: 5_000,
            offerings: 20,
            start: Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap(),
            duration_secs: 86_400,
            rate: 1_000_000.0 / 86_400.0,
            zipf_s: 1.0,
            cache_capacity: 20,
            error_rate: 0.01,
            seed: 7,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("nodes", self.nodes),
            ("ips", self.ips),
            ("contents", self.contents),
            ("offerings", self.offerings),
            ("cache_capacity", self.cache_capacity),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.nodes > usize::from(u16::MAX) || self.offerings > usize::from(u16::MAX) {
            return Err("nodes and offerings must fit in 16 bits".into());
        }
        if !(self.zipf_s > 0.0) {
            return Err("zipf_s must be positive".into());
        }
        if !(self.rate > 0.0) || self.duration_secs <= 0 {
            return Err("rate and duration_secs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err("error_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn start_secs(&self) -> i64 {
        self.start.timestamp()
    }

    /// Benign requests per second landing on an average node.
    pub fn per_node_rate(&self) -> f64 {
        self.rate / self.nodes as f64
    }
}

/// Service classes: (service type, content type, path prefix, extension, size range in bytes).
pub(crate) const CLASSES: [(&str, &str, &str, &str, (u64, u64)); 5] = [
    ("static", "video", "/vod", "mp4", (500_000, 5_000_000)),
    ("static", "image", "/img", "jpg", (20_000, 300_000)),
    ("static", "text", "/web", "html", (2_000, 50_000)),
    ("live", "video", "/live", "m3u8", (200_000, 1_000_000)),
    ("pdl", "video", "/pdl", "flv", (1_000_000, 10_000_000)),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Benign,
    Dos,
    Cpa,
    Crowd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Content {
    pub path: String,
    pub class: usize,
    /// Service type carried by requests, normally the class's.
    pub service_type: &'static str,
    pub offering: u16,
    pub node: u16,
    pub size: u64,
    /// Requests for a missing content fail with 404 and are never cached.
    pub exists: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Request {
    pub t: i64,
    pub ip: u32,
    pub content: u32,
    pub status: u16,
    /// Per-request randomness for sizes and timings.
    pub jitter: u32,
    pub origin: Origin,
}

/// Resource contention on one node: cache entries evicted each second and
/// delivery slowed down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pressure {
    pub node: u16,
    pub start: i64,
    pub end: i64,
    pub evict_per_sec: usize,
    pub slowdown: u64,
}

pub(crate) const AGENTS: [(&str, u32); 5] = [("desktop", 50), ("iphone", 20), ("android", 20), ("tablet", 5), ("smarttv", 5)];

/// A synthetic workload under construction: catalogue, clients and
/// requests. Cache outcomes are simulated when records are rendered.
#[derive(Debug, Clone)]
pub struct Workload {
    pub config: WorkloadConfig,
    pub nodes: Vec<String>,
    pub ips: Vec<IpAddr>,
    pub(crate) agents: Vec<&'static str>,
    pub contents: Vec<Content>,
    pub offerings: Vec<OfferingConfig>,
    pub(crate) requests: Vec<Request>,
    pub(crate) pressure: Vec<Pressure>,
    pub truth: GroundTruth,
}

fn hash64(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Consistent-hash ring with virtual nodes.
pub struct HashRing {
    points: Vec<(u64, u16)>,
}

impl HashRing {
    pub fn new(nodes: &[String], vnodes: usize) -> Self {
        let mut points: Vec<(u64, u16)> = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| (0..vnodes).map(move |v| (hash64(&format!("{n}#{v}")), i as u16)))
            .collect();
        points.sort_unstable();
        HashRing { points }
    }

    pub fn node_of(&self, key: &str) -> u16 {
        let h = hash64(key);
        let i = self.points.partition_point(|p| p.0 < h);
        self.points[i % self.points.len()].1
    }
}

pub fn node_name(i: usize) -> String {
    format!("node-{i:02}")
}

pub fn offering_name(i: usize) -> String {
    format!("off-{i:02}")
}

/// Benign clients live in 10.0.0.0/8.
pub fn benign_ip(i: usize) -> IpAddr {
    let i = i as u32 + 1;
    IpAddr::V4(Ipv4Addr::new(10, (i >> 16) as u8, (i >> 8) as u8, i as u8))
}

pub(crate) fn sample_agent(rng: &mut impl Rng) -> &'static str {
    let total: u32 = AGENTS.iter().map(|a| a.1).sum();
    let mut x = rng.random_range(0..total);
    for (a, w) in AGENTS {
        if x < w {
            return a;
        }
        x -= w;
    }
    AGENTS[0].0
}

impl Workload {
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn node_index(&self, name: &str) -> Option<u16> {
        self.nodes.iter().position(|n| n == name).map(|i| i as u16)
    }

    pub(crate) fn add_content(&mut self, c: Content) -> u32 {
        self.contents.push(c);
        (self.contents.len() - 1) as u32
    }

    pub(crate) fn add_ip(&mut self, ip: IpAddr, agent: &'static str) -> u32 {
        self.ips.push(ip);
        self.agents.push(agent);
        (self.ips.len() - 1) as u32
    }

    /// Offerings that carry the given class, in id order.
    pub(crate) fn offerings_of_class(&self, class: usize) -> Vec<u16> {
        let n_classes = CLASSES.len().min(self.config.offerings);
        (0..self.config.offerings).filter(|j| j % n_classes == class).map(|j| j as u16).collect()
    }

    pub fn offering_set(&self) -> OfferingSet {
        OfferingSet {
            offerings: self.offerings.clone(),
        }
    }

    /// Render requests into log records with simulated cache outcomes,
    /// ordered by time. Exact duplicate lines are nudged apart so that
    /// sanitizing keeps every generated request.
    pub fn records(&self) -> Vec<AccessLogRecord> {
        let outcomes = self.simulate();
        let mut order: Vec<usize> = (0..self.requests.len()).collect();
        order.sort_by_key(|&i| (self.requests[i].t, i));
        let mut seen: HashSet<AccessLogRecord> = HashSet::with_capacity(order.len());
        let mut out = Vec::with_capacity(order.len());
        for i in order {
            let mut r = self.render(i, outcomes[i]);
            while seen.contains(&r) {
                r.delivery_time_ms += 1;
            }
            seen.insert(r.clone());
            out.push(r);
        }
        out
    }

    fn render(&self, i: usize, (hit, slowdown): (bool, u64)) -> AccessLogRecord {
        let q = &self.requests[i];
        let c = &self.contents[q.content as usize];
        let (_, content_type, ..) = CLASSES[c.class];
        let j = u64::from(q.jitter);
        let (bytes, delivery) = if q.status >= 400 {
            (200 + j % 300, 1 + j % 5)
        } else {
            let bytes = c.size + j % 1024;
            let ms = if hit { 1 + bytes / 20_000 } else { 15 + bytes / 4_000 };
            (bytes, ms)
        };
        AccessLogRecord {
            client_ip: self.ips[q.ip as usize],
            timestamp: DateTime::from_timestamp(q.t, 0).expect("in range"),
            method: Method::Get,
            status_code: q.status,
            bytes,
            delivery_time_ms: delivery * slowdown,
            agent_type: self.agents[q.ip as usize].to_string(),
            service_type: c.service_type.to_string(),
            cache_hit: if hit { CacheStatus::Hit } else { CacheStatus::Miss },
            node_id: self.nodes[c.node as usize].clone(),
            offering_id: self.offerings[c.offering as usize].offering_id.clone(),
            content_path: c.path.clone(),
            content_type: content_type.to_string(),
            missing: MissingFields::default(),
        }
    }

    /// Per-node LRU replay; nodes are independent so they run in parallel.
    fn simulate(&self) -> Vec<(bool, u64)> {
        let mut by_node: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, q) in self.requests.iter().enumerate() {
            by_node.entry(self.contents[q.content as usize].node).or_default().push(i);
        }
        let per_node: Vec<Vec<(usize, bool, u64)>> = by_node
            .into_par_iter()
            .map(|(node, mut idx)| {
                idx.sort_by_key(|&i| (self.requests[i].t, i));
                let pressure: Vec<&Pressure> = self.pressure.iter().filter(|p| p.node == node).collect();
                let mut cache = LruCache::new(self.config.cache_capacity);
                let mut last_sec = i64::MIN;
                let mut out = Vec::with_capacity(idx.len());
                for i in idx {
                    let q = &self.requests[i];
                    let mut slowdown = 1;
                    for p in &pressure {
                        // evict once per elapsed second inside the window
                        let from = last_sec.saturating_add(1).max(p.start);
                        let to = q.t.min(p.end - 1);
                        if to >= from {
                            cache.evict(p.evict_per_sec * (to - from + 1) as usize);
                        }
                        if q.t >= p.start && q.t < p.end {
                            slowdown = slowdown.max(p.slowdown);
                        }
                    }
                    last_sec = last_sec.max(q.t);
                    let c = &self.contents[q.content as usize];
                    let cacheable = c.exists && q.status < 400;
                    let hit = cacheable && cache.access(q.content, true);
                    out.push((i, hit, slowdown));
                }
                out
            })
            .collect();
        let mut outcomes = vec![(false, 1); self.requests.len()];
        for (i, hit, slow) in per_node.into_iter().flatten() {
            outcomes[i] = (hit, slow);
        }
        outcomes
    }
}

/// Benign catalogue, clients and Poisson traffic.
pub fn generate_baseline(config: &WorkloadConfig) -> Result<Workload, String> {
    config.validate()?;
    let nodes: Vec<String> = (0..config.nodes).map(node_name).collect();
    let ring = HashRing::new(&nodes, 64);
    let n_classes = CLASSES.len().min(config.offerings);

    let mut offerings = Vec::with_capacity(config.offerings);
    for j in 0..config.offerings {
        let (service, ctype, ..) = CLASSES[j % n_classes];
        offerings.push(OfferingConfig {
            offering_id: offering_name(j),
            service_type: service.to_string(),
            content_types: vec![ctype.to_string()],
            purpose: Purpose::Production,
            profile: ExpectedProfile::Any,
        });
    }
    // the last progressive-download offering replays old videos for tests
    if let Some(j) = (0..config.offerings).rev().find(|j| n_classes == CLASSES.len() && j % n_classes == 4) {
        offerings[j].purpose = Purpose::Test;
        offerings[j].profile = ExpectedProfile::LongTail;
    }

    let mut w = Workload {
        config: config.clone(),
        nodes,
        ips: Vec::new(),
        agents: Vec::new(),
        contents: Vec::with_capacity(config.contents),
        offerings,
        requests: Vec::new(),
        pressure: Vec::new(),
        truth: GroundTruth::default(),
    };
    let mut rng = w.rng(0);
    for i in 0..config.contents {
        let class = i % n_classes;
        let (service, _, prefix, ext, (lo, hi)) = CLASSES[class];
        let path = format!("{prefix}/{i:05}.{ext}");
        let of_class = w.offerings_of_class(class);
        let offering = of_class[(i / n_classes) % of_class.len()];
        let node = ring.node_of(&path);
        let size = rng.random_range(lo..=hi);
        w.add_content(Content {
            path,
            class,
            service_type: service,
            offering,
            node,
            size,
            exists: true,
        });
    }
    for i in 0..config.ips {
        let agent = sample_agent(&mut rng);
        w.add_ip(benign_ip(i), agent);
    }

    let mut rng = w.rng(1);
    let gaps = Exp::new(config.rate).map_err(|e| e.to_string())?;
    let zipf = Zipf::new(config.contents as f64, config.zipf_s).map_err(|e| e.to_string())?;
    let start = config.start_secs() as f64;
    let end = start + config.duration_secs as f64;
    let mut t = start;
    loop {
        t += gaps.sample(&mut rng);
        if t >= end {
            break;
        }
        let rank = zipf.sample(&mut rng) as usize;
        let ip = rng.random_range(0..config.ips) as u32;
        let status = if rng.random::<f64>() < config.error_rate { 404 } else { 200 };
        w.requests.push(Request {
            t: t.floor() as i64,
            ip,
            content: (rank.clamp(1, config.contents) - 1) as u32,
            status,
            jitter: rng.random(),
            origin: Origin::Benign,
        });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorkloadConfig {
        WorkloadConfig {
            nodes: 4,
            ips: 200,
            contents: 100,
            offerings: 5,
            duration_secs: 7200,
            rate: 2.0,
            ..Default::default()
        }
    }

    #[test]
    fn zipf_head_share_matches_normalizer() {
        let zipf = Zipf::new(1000.0, 1.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let top = (0..n).filter(|_| zipf.sample(&mut rng) as usize == 1).count();
        let h: f64 = (1..=1000).map(|k| (k as f64).powf(-1.1)).sum();
        let expected = 1.0 / h;
        let share = top as f64 / n as f64;
        assert!((share - expected).abs() <= 0.2 * expected, "{share} vs {expected}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_baseline(&small()).unwrap().records();
        let b = generate_baseline(&small()).unwrap().records();
        assert_eq!(a, b);
        let c = generate_baseline(&WorkloadConfig { seed: 8, ..small() }).unwrap().records();
        assert_ne!(a, c);
    }

    #[test]
    fn huge_cache_hits_after_warmup() {
        let cfg = WorkloadConfig {
            cache_capacity: 1000,
            error_rate: 0.0,
            ..small()
        };
        let w = generate_baseline(&cfg).unwrap();
        let recs = w.records();
        let mut seen = HashSet::new();
        for r in &recs {
            let first = seen.insert((r.node_id.clone(), r.content_path.clone()));
            assert_eq!(r.cache_hit.is_hit(), !first);
        }
    }

    #[test]
    fn records_are_unique_and_sorted() {
        let recs = generate_baseline(&small()).unwrap().records();
        let set: HashSet<&AccessLogRecord> = recs.iter().collect();
        assert_eq!(set.len(), recs.len());
        assert!(recs.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        assert!(recs.iter().all(|r| r.content_path.starts_with('/')));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(WorkloadConfig { zipf_s: 0.0, ..small() }.validate().is_err());
        assert!(WorkloadConfig { nodes: 0, ..small() }.validate().is_err());
        assert!(WorkloadConfig { cache_capacity: 0, ..small() }.validate().is_err());
    }
}
