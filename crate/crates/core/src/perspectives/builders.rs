use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::dynamicity::dynamicity_from_pairs;
use super::table::{OfferingMix, Perspective, PerspectiveTable, SideData};
use super::window::WindowSpec;
use super::FeatureError;
use crate::ingest::AccessLogRecord;

pub const CONTENT_FEATURES: [&str; 6] = [
    "number_of_requests",
    "popularity",
    "cache_hit_rate",
    "request_per_ip_ratio",
    "request_per_node_ratio",
    "ip_dynamicity",
];

pub const NODE_FEATURES: [&str; 7] = [
    "cache_hit_rate",
    "cache_hit_rate_legitimate_ips",
    "data_transfer_rate",
    "request_error_rate",
    "average_request_popularity",
    "content_dynamicity",
    "ip_dynamicity",
];

pub const IP_FEATURES: [&str; 10] = [
    "number_of_requests",
    "average_request_interval",
    "number_of_nodes",
    "number_of_contents",
    "request_per_content_ratio",
    "request_per_node_ratio",
    "average_request_popularity",
    "cache_hit_rate",
    "request_error_rate",
    "mobile_rate",
];

pub const OFFERING_FEATURES: [&str; 4] = [
    "number_of_requests",
    "number_of_nodes",
    "request_popularity",
    "cache_hit_rate",
];

/// Content path → normalized popularity in `[0, 1]`.
pub type Popularity = HashMap<String, f64>;

/// Knobs for the feature builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Agent types counted by `mobile_rate` (compared case-insensitively).
    pub mobile_agents: BTreeSet<String>,
    /// Upper bound on an IP's error rate for it to count as legitimate.
    pub legit_max_error_rate: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mobile_agents: ["android", "ipad", "iphone", "mobile", "tablet"]
                .into_iter()
                .map(String::from)
                .collect(),
            legit_max_error_rate: 0.1,
        }
    }
}

impl FeatureConfig {
    fn is_mobile(&self, agent: &str) -> bool {
        self.mobile_agents.contains(&agent.to_ascii_lowercase())
    }
}

fn in_window<'a>(
    records: &'a [AccessLogRecord],
    window: &'a WindowSpec,
) -> impl Iterator<Item = &'a AccessLogRecord> + 'a {
    records.iter().filter(move |r| window.contains(r))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn distinct<T: Ord + Copy>(mut v: Vec<T>) -> usize {
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn mix_of(counts: &HashMap<&str, u64>) -> SideData {
    let counts: BTreeMap<String, u64> = counts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    SideData::OfferingMix {
        mix: OfferingMix::from_counts(&counts),
    }
}

fn modal(counts: &HashMap<&str, u64>) -> String {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.to_string())
        .unwrap_or_default()
}

fn empty(perspective: Perspective) -> FeatureError {
    FeatureError::EmptyWindow { perspective }
}

fn table(
    perspective: Perspective,
    names: &[&str],
    rows: BTreeMap<String, (Vec<f64>, u64, Option<SideData>)>,
) -> PerspectiveTable {
    let mut keys = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut request_counts = Vec::with_capacity(rows.len());
    let mut side_data = BTreeMap::new();
    for (k, (row, n, side)) in rows {
        if let Some(s) = side {
            side_data.insert(k.clone(), s);
        }
        keys.push(k);
        values.push(row);
        request_counts.push(n);
    }
    PerspectiveTable {
        perspective,
        keys,
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        values,
        request_counts,
        side_data,
    }
}

#[derive(Default)]
struct ContentAcc<'a> {
    requests: u64,
    hits: u64,
    ip_pairs: Vec<(u32, IpAddr)>,
    nodes: Vec<&'a str>,
    offerings: HashMap<&'a str, u64>,
}

/// Content perspective. Popularity is the min-max normalized count of
/// distinct requesting IPs across the window's contents.
pub fn build_content_features(
    records: &[AccessLogRecord],
    window: &WindowSpec,
) -> Result<PerspectiveTable, FeatureError> {
    let n_sw = window.sub_window_count();
    let mut accs: HashMap<&str, ContentAcc> = HashMap::new();
    for r in in_window(records, window) {
        let a = accs.entry(r.content_path.as_str()).or_default();
        a.requests += 1;
        a.hits += r.cache_hit.is_hit() as u64;
        a.ip_pairs.push((window.sub_window_of(r.unix_seconds()) as u32, r.client_ip));
        a.nodes.push(r.node_id.as_str());
        *a.offerings.entry(r.offering_id.as_str()).or_default() += 1;
    }
    if accs.is_empty() {
        return Err(empty(Perspective::Content));
    }

    let mut partial: BTreeMap<String, (u64, u64, usize, usize, f64, SideData)> = BTreeMap::new();
    for (k, mut a) in accs {
        let ips = distinct(a.ip_pairs.iter().map(|p| p.1).collect());
        let nodes = distinct(std::mem::take(&mut a.nodes));
        let dynamicity = dynamicity_from_pairs(&mut a.ip_pairs, n_sw);
        partial.insert(
            k.to_string(),
            (a.requests, a.hits, ips, nodes, dynamicity, mix_of(&a.offerings)),
        );
    }

    let min_ips = partial.values().map(|p| p.2).min().unwrap_or(0) as f64;
    let max_ips = partial.values().map(|p| p.2).max().unwrap_or(0) as f64;
    let span = max_ips - min_ips;

    let rows = partial
        .into_iter()
        .map(|(k, (requests, hits, ips, nodes, dynamicity, side))| {
            let popularity = if span > 0.0 {
                (ips as f64 - min_ips) / span
            } else {
                0.0
            };
            let row = vec![
                requests as f64,
                popularity,
                ratio(hits, requests),
                ratio(requests, ips as u64),
                ratio(requests, nodes as u64),
                dynamicity,
            ];
            (k, (row, requests, Some(side)))
        })
        .collect();
    Ok(table(Perspective::Content, &CONTENT_FEATURES, rows))
}

/// Extract the popularity column of a content table.
pub fn popularity_map(content: &PerspectiveTable) -> Popularity {
    let idx = content
        .feature_index("popularity")
        .expect("content table carries popularity");
    content
        .keys
        .iter()
        .zip(&content.values)
        .map(|(k, row)| (k.clone(), row[idx]))
        .collect()
}

fn popularity_of(popularity: &Popularity, path: &str) -> f64 {
    popularity.get(path).copied().unwrap_or(0.0)
}

#[derive(Default)]
struct IpAcc<'a> {
    requests: u64,
    first: i64,
    last: i64,
    nodes: Vec<&'a str>,
    contents: Vec<&'a str>,
    popularity_sum: f64,
    hits: u64,
    errors: u64,
    mobile: u64,
    offerings: HashMap<&'a str, u64>,
}

fn ip_accumulators<'a>(
    records: &'a [AccessLogRecord],
    window: &'a WindowSpec,
    popularity: &Popularity,
    config: &FeatureConfig,
) -> HashMap<IpAddr, IpAcc<'a>> {
    let mut accs: HashMap<IpAddr, IpAcc> = HashMap::new();
    for r in in_window(records, window) {
        let t = r.unix_seconds();
        let a = accs.entry(r.client_ip).or_insert_with(|| IpAcc {
            first: t,
            last: t,
            ..Default::default()
        });
        a.requests += 1;
        a.first = a.first.min(t);
        a.last = a.last.max(t);
        a.nodes.push(r.node_id.as_str());
        a.contents.push(r.content_path.as_str());
        a.popularity_sum += popularity_of(popularity, &r.content_path);
        a.hits += r.cache_hit.is_hit() as u64;
        a.errors += r.is_error() as u64;
        a.mobile += config.is_mobile(&r.agent_type) as u64;
        *a.offerings.entry(r.offering_id.as_str()).or_default() += 1;
    }
    accs
}

/// IPs whose average request popularity is at least the median across IPs
/// and whose error rate stays within the configured bound.
pub fn legitimate_ips(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    popularity: &Popularity,
    config: &FeatureConfig,
) -> HashSet<IpAddr> {
    let mut stats: Vec<(IpAddr, f64, f64)> = Vec::new();
    let mut accs: HashMap<IpAddr, (u64, u64, f64)> = HashMap::new();
    for r in in_window(records, window) {
        let a = accs.entry(r.client_ip).or_default();
        a.0 += 1;
        a.1 += r.is_error() as u64;
        a.2 += popularity_of(popularity, &r.content_path);
    }
    for (ip, (n, errors, pop)) in accs {
        stats.push((ip, pop / n as f64, ratio(errors, n)));
    }
    if stats.is_empty() {
        return HashSet::new();
    }
    let mut pops: Vec<f64> = stats.iter().map(|s| s.1).collect();
    pops.sort_by(f64::total_cmp);
    let m = pops.len();
    let median = if m % 2 == 1 {
        pops[m / 2]
    } else {
        (pops[m / 2 - 1] + pops[m / 2]) / 2.0
    };
    stats
        .into_iter()
        .filter(|(_, pop, err)| *pop >= median && *err <= config.legit_max_error_rate)
        .map(|(ip, _, _)| ip)
        .collect()
}

#[derive(Default)]
struct NodeAcc<'a> {
    requests: u64,
    hits: u64,
    legit_requests: u64,
    legit_hits: u64,
    bytes: u128,
    delivery_ms: u128,
    errors: u64,
    popularity_sum: f64,
    content_pairs: Vec<(u32, &'a str)>,
    ip_pairs: Vec<(u32, IpAddr)>,
    offerings: HashMap<&'a str, u64>,
}

/// Node perspective. Data transfer rate is bytes per millisecond divided by
/// 1000, i.e. decimal MB/s.
pub fn build_node_features(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    popularity: &Popularity,
    config: &FeatureConfig,
) -> Result<PerspectiveTable, FeatureError> {
    let legit = legitimate_ips(records, window, popularity, config);
    let n_sw = window.sub_window_count();
    let mut accs: HashMap<&str, NodeAcc> = HashMap::new();
    for r in in_window(records, window) {
        let sw = window.sub_window_of(r.unix_seconds()) as u32;
        let a = accs.entry(r.node_id.as_str()).or_default();
        let hit = r.cache_hit.is_hit() as u64;
        a.requests += 1;
        a.hits += hit;
        if legit.contains(&r.client_ip) {
            a.legit_requests += 1;
            a.legit_hits += hit;
        }
        a.bytes += r.bytes as u128;
        a.delivery_ms += r.delivery_time_ms as u128;
        a.errors += r.is_error() as u64;
        a.popularity_sum += popularity_of(popularity, &r.content_path);
        a.content_pairs.push((sw, r.content_path.as_str()));
        a.ip_pairs.push((sw, r.client_ip));
        *a.offerings.entry(r.offering_id.as_str()).or_default() += 1;
    }
    if accs.is_empty() {
        return Err(empty(Perspective::Node));
    }
    let rows = accs
        .into_iter()
        .map(|(k, mut a)| {
            let hit_rate = ratio(a.hits, a.requests);
            let legit_rate = if a.legit_requests == 0 {
                hit_rate
            } else {
                ratio(a.legit_hits, a.legit_requests)
            };
            let transfer = if a.delivery_ms == 0 {
                0.0
            } else {
                a.bytes as f64 / a.delivery_ms as f64 / 1000.0
            };
            let row = vec![
                hit_rate,
                legit_rate,
                transfer,
                ratio(a.errors, a.requests),
                a.popularity_sum / a.requests as f64,
                dynamicity_from_pairs(&mut a.content_pairs, n_sw),
                dynamicity_from_pairs(&mut a.ip_pairs, n_sw),
            ];
            (k.to_string(), (row, a.requests, Some(mix_of(&a.offerings))))
        })
        .collect();
    Ok(table(Perspective::Node, &NODE_FEATURES, rows))
}

/// Client-IP perspective. An IP with a single request gets the window
/// duration as its average request interval.
pub fn build_ip_features(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    popularity: &Popularity,
    config: &FeatureConfig,
) -> Result<PerspectiveTable, FeatureError> {
    let accs = ip_accumulators(records, window, popularity, config);
    if accs.is_empty() {
        return Err(empty(Perspective::Ip));
    }
    let rows = accs
        .into_iter()
        .map(|(ip, a)| {
            let nodes = distinct(a.nodes) as u64;
            let contents = distinct(a.contents) as u64;
            let interval = if a.requests == 1 {
                window.duration_secs as f64
            } else {
                (a.last - a.first) as f64 / (a.requests - 1) as f64
            };
            let row = vec![
                a.requests as f64,
                interval,
                nodes as f64,
                contents as f64,
                ratio(a.requests, contents),
                ratio(a.requests, nodes),
                a.popularity_sum / a.requests as f64,
                ratio(a.hits, a.requests),
                ratio(a.errors, a.requests),
                ratio(a.mobile, a.requests),
            ];
            (ip.to_string(), (row, a.requests, Some(mix_of(&a.offerings))))
        })
        .collect();
    Ok(table(Perspective::Ip, &IP_FEATURES, rows))
}

#[derive(Default)]
struct OfferingAcc<'a> {
    requests: u64,
    nodes: Vec<&'a str>,
    popularity_sum: f64,
    hits: u64,
    service_types: HashMap<&'a str, u64>,
    content_types: HashMap<&'a str, u64>,
}

/// Offering perspective; modal service and content type go to side data.
pub fn build_offering_features(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    popularity: &Popularity,
) -> Result<PerspectiveTable, FeatureError> {
    let mut accs: HashMap<&str, OfferingAcc> = HashMap::new();
    for r in in_window(records, window) {
        let a = accs.entry(r.offering_id.as_str()).or_default();
        a.requests += 1;
        a.nodes.push(r.node_id.as_str());
        a.popularity_sum += popularity_of(popularity, &r.content_path);
        a.hits += r.cache_hit.is_hit() as u64;
        *a.service_types.entry(r.service_type.as_str()).or_default() += 1;
        *a.content_types.entry(r.content_type.as_str()).or_default() += 1;
    }
    if accs.is_empty() {
        return Err(empty(Perspective::Offering));
    }
    let rows = accs
        .into_iter()
        .map(|(k, a)| {
            let side = SideData::OfferingProfile {
                service_type: modal(&a.service_types),
                content_type: modal(&a.content_types),
            };
            let row = vec![
                a.requests as f64,
                distinct(a.nodes) as f64,
                a.popularity_sum / a.requests as f64,
                ratio(a.hits, a.requests),
            ];
            (k.to_string(), (row, a.requests, Some(side)))
        })
        .collect();
    Ok(table(Perspective::Offering, &OFFERING_FEATURES, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CacheStatus, Method, MissingFields};
    use chrono::DateTime;

    const T0: i64 = 1_700_000_000;

    fn rec(ip: &str, node: &str, content: &str, sec: i64, hit: bool) -> AccessLogRecord {
        AccessLogRecord {
            client_ip: ip.parse().unwrap(),
            timestamp: DateTime::from_timestamp(T0 + sec, 0).unwrap(),
            method: Method::Get,
            status_code: 200,
            bytes: 100,
            delivery_time_ms: 10,
            agent_type: "desktop".into(),
            service_type: "static".into(),
            cache_hit: if hit { CacheStatus::Hit } else { CacheStatus::Miss },
            node_id: node.into(),
            offering_id: "o1".into(),
            content_path: content.into(),
            content_type: "video".into(),
            missing: MissingFields::default(),
        }
    }

    fn window() -> WindowSpec {
        WindowSpec::new(DateTime::from_timestamp(T0, 0).unwrap(), 3600, 600).unwrap()
    }

    fn cell(t: &PerspectiveTable, key: &str, feature: &str) -> f64 {
        t.value(key, feature).unwrap()
    }

    #[test]
    fn content_tally() {
        let recs = vec![
            rec("1.1.1.1", "n1", "/a", 0, true),
            rec("1.1.1.1", "n1", "/a", 1, true),
            rec("2.2.2.2", "n1", "/a", 2, true),
            rec("2.2.2.2", "n1", "/a", 3, false),
            rec("3.3.3.3", "n2", "/b", 4, false),
            rec("1.1.1.1", "n2", "/c", 5, true),
        ];
        let t = build_content_features(&recs, &window()).unwrap();
        assert_eq!(cell(&t, "/a", "number_of_requests"), 4.0);
        assert_eq!(cell(&t, "/a", "cache_hit_rate"), 0.75);
        assert_eq!(cell(&t, "/a", "request_per_ip_ratio"), 2.0);
        assert_eq!(cell(&t, "/a", "request_per_node_ratio"), 4.0);
        assert_eq!(cell(&t, "/a", "popularity"), 1.0);
        assert_eq!(cell(&t, "/b", "cache_hit_rate"), 0.0);
        assert_eq!(cell(&t, "/b", "popularity"), 0.0);
    }

    #[test]
    fn node_rates() {
        let mut recs: Vec<AccessLogRecord> = (0..10).map(|i| rec("1.1.1.1", "n1", "/a", i, true)).collect();
        recs[3].status_code = 404;
        recs[7].status_code = 404;
        let mut fast = rec("2.2.2.2", "n2", "/a", 20, false);
        fast.bytes = 1000;
        fast.delivery_time_ms = 1;
        recs.push(fast);
        let pop = Popularity::new();
        let t = build_node_features(&recs, &window(), &pop, &FeatureConfig::default()).unwrap();
        assert_eq!(cell(&t, "n1", "request_error_rate"), 0.2);
        assert_eq!(cell(&t, "n1", "cache_hit_rate"), 1.0);
        assert!((cell(&t, "n2", "data_transfer_rate") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ip_intervals_and_ratios() {
        let mut recs = vec![
            rec("1.1.1.1", "n1", "/a", 0, true),
            rec("1.1.1.1", "n1", "/a", 10, true),
            rec("1.1.1.1", "n1", "/a", 30, true),
            rec("9.9.9.9", "n1", "/a", 40, true),
        ];
        for i in 0..8 {
            recs.push(rec("2.2.2.2", ["n1", "n2"][i % 2], ["/x", "/y"][i / 4], 50 + i as i64, true));
        }
        let pop = Popularity::new();
        let t = build_ip_features(&recs, &window(), &pop, &FeatureConfig::default()).unwrap();
        assert_eq!(cell(&t, "1.1.1.1", "average_request_interval"), 15.0);
        assert_eq!(cell(&t, "9.9.9.9", "average_request_interval"), 3600.0);
        assert_eq!(cell(&t, "2.2.2.2", "request_per_content_ratio"), 4.0);
        assert_eq!(cell(&t, "2.2.2.2", "request_per_node_ratio"), 4.0);
    }

    #[test]
    fn offering_tally() {
        let recs = vec![
            rec("1.1.1.1", "n1", "/a", 0, false),
            rec("2.2.2.2", "n2", "/a", 1, false),
            rec("3.3.3.3", "n2", "/a", 2, false),
        ];
        let pop: Popularity = [("/a".to_string(), 1.0)].into_iter().collect();
        let t = build_offering_features(&recs, &window(), &pop).unwrap();
        assert_eq!(cell(&t, "o1", "number_of_requests"), 3.0);
        assert_eq!(cell(&t, "o1", "number_of_nodes"), 2.0);
        assert_eq!(cell(&t, "o1", "cache_hit_rate"), 0.0);
        assert_eq!(cell(&t, "o1", "request_popularity"), 1.0);
    }
}
