use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CorrectError, CorrectionConfig};
use crate::detect::{AnomalyCandidate, Attack, Mark, CROWD_SUSPECT};
use crate::ingest::AccessLogRecord;
use crate::perspectives::{Perspective, Popularity, WindowSpec};

pub const MIN_SUB_WINDOWS: usize = 6;
const MAD_SCALE: f64 = 0.6745;
/// sqrt(pi / 2): mean absolute deviation to standard deviation under normality.
const MEAN_AD_SCALE: f64 = 1.253_314;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    RequestBurst,
    CacheHitDrop,
    PopularityDrop,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::RequestBurst, EventKind::CacheHitDrop, EventKind::PopularityDrop];

    fn upward(self) -> bool {
        self == EventKind::RequestBurst
    }

    /// Attack types this kind of event corroborates.
    pub fn corroborates(self, attack: Attack) -> bool {
        matches!(
            (self, attack),
            (EventKind::RequestBurst, Attack::Dos)
                | (EventKind::CacheHitDrop, Attack::Dos)
                | (EventKind::CacheHitDrop, Attack::Cpa)
                | (EventKind::PopularityDrop, Attack::Cpa)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesEvent {
    pub kind: EventKind,
    /// Inclusive sub-window indices.
    pub first_sub_window: usize,
    pub last_sub_window: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Largest absolute robust z-score inside the range.
    pub magnitude: f64,
    pub implicated: BTreeMap<Perspective, Vec<String>>,
    /// Set when the event is explained by one popular content and many clients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowd_content: Option<String>,
}

impl TimeSeriesEvent {
    pub fn implicates(&self, p: Perspective, entity: &str) -> bool {
        self.implicated.get(&p).is_some_and(|v| v.binary_search_by(|e| e.as_str().cmp(entity)).is_ok())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Location and scale of a robust z-score. When the MAD is zero the mean
/// absolute deviation takes over; when both vanish every finite deviation
/// from the median counts as infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScale {
    pub median: f64,
    /// Divisor such that `z = (x - median) / scale`.
    pub scale: f64,
}

impl RobustScale {
    pub fn fit(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let med = median(&v);
        let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = median(&dev);
        let scale = if mad > 0.0 {
            mad / MAD_SCALE
        } else {
            MEAN_AD_SCALE * dev.iter().sum::<f64>() / dev.len() as f64
        };
        Some(RobustScale { median: med, scale })
    }

    pub fn z(&self, x: f64) -> f64 {
        let d = x - self.median;
        if self.scale > 0.0 {
            d / self.scale
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

pub fn robust_z_scores(values: &[f64]) -> Vec<f64> {
    match RobustScale::fit(values) {
        Some(s) => values.iter().map(|&x| s.z(x)).collect(),
        None => Vec::new(),
    }
}

/// Contiguous runs where the z-score passes `threshold` in the given
/// direction, as `(first, last, max |z|)`. `None` entries (empty
/// sub-windows) never flag and are ignored when fitting the scale.
pub fn flagged_runs(series: &[Option<f64>], upward: bool, threshold: f64) -> Vec<(usize, usize, f64)> {
    let present: Vec<f64> = series.iter().flatten().copied().collect();
    let Some(scale) = RobustScale::fit(&present) else {
        return Vec::new();
    };
    let mut runs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, v) in series.iter().enumerate() {
        let Some(v) = v else { continue };
        let z = scale.z(*v);
        let hit = if upward { z > threshold } else { z < -threshold };
        if !hit {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r.1 + 1 == i => {
                r.1 = i;
                r.2 = r.2.max(z.abs());
            }
            _ => runs.push((i, i, z.abs())),
        }
    }
    runs
}

#[derive(Default, Clone)]
struct Cell {
    n: f64,
    hits: f64,
    pop: f64,
    errors: f64,
}

fn value_of(kind: EventKind, c: &Cell) -> Option<f64> {
    match kind {
        EventKind::RequestBurst => Some(c.n),
        _ if c.n <= 0.0 => None,
        EventKind::CacheHitDrop => Some(c.hits / c.n),
        EventKind::PopularityDrop => Some(c.pop / c.n),
    }
}

fn within(kind: EventKind, scale: &RobustScale, c: &Cell, threshold: f64) -> bool {
    match value_of(kind, c) {
        None => true,
        Some(v) => {
            let z = scale.z(v);
            if kind.upward() {
                z <= threshold
            } else {
                z >= -threshold
            }
        }
    }
}

/// Greedily remove the largest contributors of one perspective until every
/// sub-window of the run is back within threshold.
fn implicate(
    kind: EventKind,
    scale: &RobustScale,
    totals: &[Cell],
    per_entity: &HashMap<String, Vec<Cell>>,
    threshold: f64,
    limit: usize,
) -> Vec<String> {
    let reference = match kind {
        EventKind::RequestBurst => 0.0,
        _ => scale.median,
    };
    let mut ranked: Vec<(f64, &String)> = per_entity
        .iter()
        .map(|(k, cells)| {
            let score: f64 = cells
                .iter()
                .map(|c| match kind {
                    EventKind::RequestBurst => c.n,
                    EventKind::CacheHitDrop => c.n * reference - c.hits,
                    EventKind::PopularityDrop => c.n * reference - c.pop,
                })
                .sum();
            (score, k)
        })
        .filter(|(s, _)| *s > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut cur = totals.to_vec();
    let mut out = Vec::new();
    for (_, key) in ranked.into_iter().take(limit) {
        if cur.iter().all(|c| within(kind, scale, c, threshold)) {
            break;
        }
        for (c, e) in cur.iter_mut().zip(&per_entity[key]) {
            c.n -= e.n;
            c.hits -= e.hits;
            c.pop -= e.pop;
        }
        out.push(key.clone());
    }
    out.sort();
    out
}

/// Detect request bursts, cache-hit drops and popularity drops per
/// sub-window, then attribute each to the entities driving it.
pub fn time_series_events(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    popularity: &Popularity,
    cfg: &CorrectionConfig,
) -> Result<Vec<TimeSeriesEvent>, CorrectError> {
    let n_sw = window.sub_window_count();
    if n_sw < MIN_SUB_WINDOWS {
        return Err(CorrectError::TooFewSubWindows { found: n_sw, required: MIN_SUB_WINDOWS });
    }
    let in_window: Vec<&AccessLogRecord> = records.iter().filter(|r| window.contains(r)).collect();
    let sw_of = |r: &AccessLogRecord| window.sub_window_of(r.unix_seconds());
    let pop_of = |r: &AccessLogRecord| popularity.get(&r.content_path).copied().unwrap_or(0.0);

    let mut totals = vec![Cell::default(); n_sw];
    for r in &in_window {
        let c = &mut totals[sw_of(r)];
        c.n += 1.0;
        c.hits += f64::from(u8::from(r.cache_hit.is_hit()));
        c.pop += pop_of(r);
        c.errors += f64::from(u8::from(r.is_error()));
    }

    let mut content_series: Option<HashMap<&str, Vec<Cell>>> = None;
    let mut events = Vec::new();
    for kind in EventKind::ALL {
        let values: Vec<Option<f64>> = totals.iter().map(|c| value_of(kind, c)).collect();
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let Some(scale) = RobustScale::fit(&present) else { continue };
        for (first, last, magnitude) in flagged_runs(&values, kind.upward(), cfg.mad_z) {
            let range = first..=last;
            let run_totals: Vec<Cell> = totals[range.clone()].to_vec();
            let mut by: [HashMap<String, Vec<Cell>>; 3] = Default::default();
            for r in in_window.iter().filter(|r| range.contains(&sw_of(r))) {
                let s = sw_of(r) - first;
                let keys = [r.client_ip.to_string(), r.node_id.clone(), r.content_path.clone()];
                for (map, key) in by.iter_mut().zip(keys) {
                    let cells = map.entry(key).or_insert_with(|| vec![Cell::default(); last - first + 1]);
                    cells[s].n += 1.0;
                    cells[s].hits += f64::from(u8::from(r.cache_hit.is_hit()));
                    cells[s].pop += pop_of(r);
                    cells[s].errors += f64::from(u8::from(r.is_error()));
                }
            }
            let mut implicated = BTreeMap::new();
            for (p, map) in [Perspective::Ip, Perspective::Node, Perspective::Content].into_iter().zip(&by) {
                implicated.insert(p, implicate(kind, &scale, &run_totals, map, cfg.mad_z, cfg.max_implicated));
            }
            let crowd_content = if kind == EventKind::RequestBurst {
                let series = content_series.get_or_insert_with(|| {
                    let mut m: HashMap<&str, Vec<Cell>> = HashMap::new();
                    for r in &in_window {
                        let cells = m.entry(r.content_path.as_str()).or_insert_with(|| vec![Cell::default(); n_sw]);
                        let c = &mut cells[sw_of(r)];
                        c.n += 1.0;
                        c.errors += f64::from(u8::from(r.is_error()));
                    }
                    m
                });
                crowd_content(&in_window, &run_totals, &scale, series, first..=last, popularity, cfg, |r| {
                    range.contains(&sw_of(r))
                })
            } else {
                None
            };
            if let Some((content, ips, nodes)) = &crowd_content {
                // a crowd is attributed to the content and everyone who fetched it
                implicated.insert(Perspective::Content, vec![content.clone()]);
                implicated.insert(Perspective::Ip, ips.iter().cloned().collect());
                implicated.insert(Perspective::Node, nodes.iter().cloned().collect());
            }
            events.push(TimeSeriesEvent {
                kind,
                first_sub_window: first,
                last_sub_window: last,
                start: DateTime::from_timestamp(window.sub_window_start(first), 0).unwrap_or(window.start),
                end: DateTime::from_timestamp(window.sub_window_start(last + 1).min(window.end_secs()), 0)
                    .unwrap_or(window.start),
                magnitude,
                implicated,
                crowd_content: crowd_content.map(|c| c.0),
            });
        }
    }
    events.sort_by_key(|e| (e.first_sub_window, e.kind));
    Ok(events)
}

/// A burst is crowd-like when one popular content carries most of the
/// excess over its own typical level, is fetched by many distinct clients
/// and errors stay normal.
#[allow(clippy::too_many_arguments)]
fn crowd_content(
    records: &[&AccessLogRecord],
    run_totals: &[Cell],
    scale: &RobustScale,
    per_content: &HashMap<&str, Vec<Cell>>,
    run: std::ops::RangeInclusive<usize>,
    popularity: &Popularity,
    cfg: &CorrectionConfig,
    in_run: impl Fn(&AccessLogRecord) -> bool,
) -> Option<(String, BTreeSet<String>, BTreeSet<String>)> {
    let own_excess = |cells: &[Cell]| {
        let all: Vec<f64> = cells.iter().map(|c| c.n).collect();
        let base = RobustScale::fit(&all).map_or(0.0, |s| s.median);
        cells[run.clone()].iter().map(|c| (c.n - base).max(0.0)).sum::<f64>()
    };
    let (top, top_excess, cells) = per_content
        .iter()
        .map(|(k, cells)| (*k, own_excess(cells), cells))
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))?;
    let excess: f64 = run_totals.iter().map(|c| (c.n - scale.median).max(0.0)).sum();
    if excess <= 0.0 || top_excess < cfg.crowd_content_share * excess {
        return None;
    }
    let top_n: f64 = cells[run.clone()].iter().map(|c| c.n).sum();
    let top_errors: f64 = cells[run.clone()].iter().map(|c| c.errors).sum();
    if top_errors / top_n > cfg.crowd_max_error_rate {
        return None;
    }
    if popularity.get(top).copied().unwrap_or(0.0) < cfg.crowd_min_popularity {
        return None;
    }
    let mut ips = HashSet::new();
    let mut nodes = BTreeSet::new();
    for r in records.iter().filter(|r| r.content_path == *top && in_run(r)) {
        ips.insert(r.client_ip);
        nodes.insert(r.node_id.clone());
    }
    if ips.len() < cfg.crowd_min_ips {
        return None;
    }
    Some((top.to_string(), ips.into_iter().map(|ip| ip.to_string()).collect(), nodes))
}

/// Marks candidates implicated in an event of a matching kind; tags those
/// implicated in a crowd-like burst instead.
pub fn temporal_corroborate(mut cands: Vec<AnomalyCandidate>, events: &[TimeSeriesEvent]) -> Vec<AnomalyCandidate> {
    for c in cands.iter_mut().filter(|c| c.is_open()) {
        for e in events {
            if !e.implicates(c.perspective, &c.entity) {
                continue;
            }
            let span = format!("sub-windows {}..={}", e.first_sub_window, e.last_sub_window);
            if let Some(content) = &e.crowd_content {
                if c.tags.insert(CROWD_SUSPECT.to_string()) {
                    c.trail.push(format!("inside crowd-like burst on {content} ({span})"));
                }
            } else if e.kind.corroborates(c.attack) {
                c.add_mark(Mark::Temporal, format!("implicated in {:?} ({span})", e.kind));
            }
        }
    }
    cands
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mad_z_of_single_spike() {
        let mut v = [100.0; 24];
        v[5] = 1000.0;
        let runs = flagged_runs(&v.iter().map(|x| Some(*x)).collect::<Vec<_>>(), true, 3.5);
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].0, runs[0].1), (5, 5));
        // MAD is zero, so the mean absolute deviation scales: 900 / (1.253314 * 900 / 24)
        assert!((runs[0].2 - 24.0 / 1.253_314).abs() < 1e-9);
    }

    #[test]
    fn flat_series_has_no_runs() {
        let v = vec![Some(7.0); 12];
        assert!(flagged_runs(&v, true, 3.5).is_empty());
        assert!(flagged_runs(&v, false, 3.5).is_empty());
    }

    #[test]
    fn adjacent_drops_merge() {
        let mut v: Vec<Option<f64>> = (0..12).map(|i| Some(0.9 + 0.001 * f64::from(i % 3))).collect();
        v[6] = Some(0.3);
        v[7] = Some(0.3);
        let runs = flagged_runs(&v, false, 3.5);
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].0, runs[0].1), (6, 7));
    }

    #[test]
    fn z_scores_ignore_offsets() {
        let v = [3.0, 5.0, 4.0, 9.0, 4.5, 4.2, 30.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 1234.5).collect();
        for (a, b) in robust_z_scores(&v).iter().zip(robust_z_scores(&shifted)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn at(ip: String, content: &str, sec: i64) -> AccessLogRecord {
        use crate::ingest::{CacheStatus, Method, MissingFields};
        AccessLogRecord {
            client_ip: ip.parse().unwrap(),
            timestamp: DateTime::from_timestamp(1_700_000_000 + sec, 0).unwrap(),
            method: Method::Get,
            status_code: 200,
            bytes: 10,
            delivery_time_ms: 1,
            agent_type: "pc".into(),
            service_type: "static".into(),
            cache_hit: CacheStatus::Hit,
            node_id: "n1".into(),
            offering_id: "o".into(),
            content_path: content.into(),
            content_type: "video".into(),
            missing: MissingFields::default(),
        }
    }

    /// Twelve one-minute sub-windows of steady traffic, mostly on `/hot`.
    fn baseline() -> Vec<AccessLogRecord> {
        let mut v = Vec::new();
        for sw in 0..12 {
            for i in 0..20 {
                v.push(at(format!("10.0.0.{}", i % 2 + 1), "/hot", sw * 60 + i));
            }
            v.push(at("10.0.0.3".into(), "/cold", sw * 60 + 30));
        }
        v
    }

    fn bursts(records: &[AccessLogRecord]) -> Vec<TimeSeriesEvent> {
        let window = WindowSpec::new(DateTime::from_timestamp(1_700_000_000, 0).unwrap(), 720, 60).unwrap();
        let pop: Popularity = [("/hot".to_string(), 1.0), ("/cold".to_string(), 0.05)].into_iter().collect();
        time_series_events(records, &window, &pop, &CorrectionConfig::default())
            .unwrap()
            .into_iter()
            .filter(|e| e.kind == EventKind::RequestBurst)
            .collect()
    }

    #[test]
    fn many_clients_on_popular_content_is_crowd_like() {
        let mut recs = baseline();
        recs.extend((0..150).map(|i| at(format!("10.1.{}.{}", i / 200, i % 200 + 1), "/hot", 6 * 60 + i % 60)));
        let ev = bursts(&recs);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].crowd_content.as_deref(), Some("/hot"));
        assert!(ev[0].implicates(Perspective::Ip, "10.1.0.77"));
    }

    #[test]
    fn burst_on_new_contents_is_not_crowd_like() {
        // /hot still has the most requests in the run, but none of the excess
        let mut recs = baseline();
        for k in 0..15 {
            for j in 0..10 {
                recs.push(at(format!("172.16.0.{}", j % 5 + 1), &format!("/x{k}"), 6 * 60 + j));
            }
        }
        let ev = bursts(&recs);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].crowd_content, None);
        assert!(ev[0].implicates(Perspective::Ip, "172.16.0.1"));
        assert!(!ev[0].implicates(Perspective::Ip, "10.0.0.1"));
    }
}
