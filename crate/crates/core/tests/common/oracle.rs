//! Brute-force aggregator that rescans the whole log for every entity.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use perspecta::ingest::{AccessLogRecord, CacheStatus, Method, MissingFields};
use perspecta::perspectives::{build_all, FeatureConfig, Perspective, PerspectiveTable, SideData, WindowSpec};

const T0: i64 = 1_700_000_000;

const INTEGER_FEATURES: [&str; 4] = ["number_of_requests", "number_of_nodes", "number_of_contents", "number_of_ips"];

fn random_log(seed: u64) -> (Vec<AccessLogRecord>, WindowSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = [600, 1800, 3600][rng.random_range(0..3)];
    let duration = sub * rng.random_range(2..8);
    let window = WindowSpec::new(DateTime::from_timestamp(T0, 0).unwrap(), duration, sub).unwrap();
    let n = rng.random_range(1..=1000);
    let n_ips = rng.random_range(1..40);
    let n_contents = rng.random_range(1..60);
    let agents = ["desktop", "iPhone", "android", "bot", "ipad"];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ip: IpAddr = match rng.random_range(0..n_ips) {
            i if i % 7 == 6 => format!("2001:db8::{i:x}").parse().unwrap(),
            i => format!("10.0.{}.{}", i / 200, i % 200 + 1).parse().unwrap(),
        };
        // some records fall outside the window and must be ignored
        let t = T0 + rng.random_range(-600..duration + 600);
        let status = [200, 200, 200, 206, 304, 403, 404, 500][rng.random_range(0..8)];
        out.push(AccessLogRecord {
            client_ip: ip,
            timestamp: DateTime::from_timestamp(t, 0).unwrap(),
            method: Method::Get,
            status_code: status,
            bytes: rng.random_range(0..2_000_000),
            delivery_time_ms: rng.random_range(0..500),
            agent_type: agents[rng.random_range(0..agents.len())].into(),
            service_type: ["static", "live", "pdl"][rng.random_range(0..3)].into(),
            cache_hit: [CacheStatus::Hit, CacheStatus::Miss, CacheStatus::Unknown][rng.random_range(0..3)],
            node_id: format!("n{}", rng.random_range(0..6)),
            offering_id: format!("o{}", rng.random_range(0..4)),
            content_path: format!("/c/{}", rng.random_range(0..n_contents)),
            content_type: ["video", "text", "image"][rng.random_range(0..3)].into(),
            missing: MissingFields::default(),
        });
    }
    (out, window)
}

fn inside<'a>(records: &'a [AccessLogRecord], w: &'a WindowSpec) -> Vec<&'a AccessLogRecord> {
    let end = w.start.timestamp() + w.duration_secs;
    records
        .iter()
        .filter(|r| r.timestamp.timestamp() >= w.start.timestamp() && r.timestamp.timestamp() < end)
        .collect()
}

fn slot(r: &AccessLogRecord, w: &WindowSpec) -> usize {
    ((r.timestamp.timestamp() - w.start.timestamp()) / w.sub_window_secs) as usize
}

fn jaccard_dynamicity<T: Ord + Clone>(recs: &[&AccessLogRecord], w: &WindowSpec, member: impl Fn(&AccessLogRecord) -> T) -> f64 {
    let slots = ((w.duration_secs + w.sub_window_secs - 1) / w.sub_window_secs) as usize;
    if slots < 2 {
        return 0.0;
    }
    let sets: Vec<BTreeSet<T>> = (0..slots)
        .map(|s| recs.iter().filter(|r| slot(r, w) == s).map(|r| member(r)).collect())
        .collect();
    let mut total = 0.0;
    for i in 1..slots {
        let union = sets[i - 1].union(&sets[i]).count();
        let inter = sets[i - 1].intersection(&sets[i]).count();
        total += if union == 0 { 0.0 } else { 1.0 - inter as f64 / union as f64 };
    }
    total / (slots - 1) as f64
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn count_distinct<T: Ord>(it: impl Iterator<Item = T>) -> usize {
    it.collect::<BTreeSet<T>>().len()
}

fn hit(r: &AccessLogRecord) -> bool {
    r.cache_hit == CacheStatus::Hit
}

fn error(r: &AccessLogRecord) -> bool {
    r.status_code >= 400 && r.status_code < 600
}

fn mix(recs: &[&AccessLogRecord]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for r in recs {
        *m.entry(r.offering_id.clone()).or_insert(0u64) += 1;
    }
    m.into_iter().map(|(k, v)| (k, v as f64 / recs.len() as f64)).collect()
}

struct Oracle {
    tables: BTreeMap<Perspective, BTreeMap<String, (Vec<f64>, u64)>>,
    mixes: BTreeMap<(Perspective, String), BTreeMap<String, f64>>,
    profiles: BTreeMap<String, (String, String)>,
}

fn oracle(records: &[AccessLogRecord], w: &WindowSpec) -> Oracle {
    let all = inside(records, w);
    let keys = |f: &dyn Fn(&AccessLogRecord) -> String| all.iter().map(|r| f(r)).collect::<BTreeSet<String>>();
    let of = |f: &dyn Fn(&AccessLogRecord) -> String, k: &str| {
        all.iter().copied().filter(|r| f(r) == k).collect::<Vec<&AccessLogRecord>>()
    };
    let mut tables = BTreeMap::new();
    let mut mixes = BTreeMap::new();

    let content_key = |r: &AccessLogRecord| r.content_path.clone();
    let ip_counts: BTreeMap<String, usize> = keys(&content_key)
        .into_iter()
        .map(|k| {
            let n = count_distinct(of(&content_key, &k).iter().map(|r| r.client_ip));
            (k, n)
        })
        .collect();
    let lo = *ip_counts.values().min().unwrap() as f64;
    let hi = *ip_counts.values().max().unwrap() as f64;
    let pop = |path: &str| if hi > lo { (ip_counts[path] as f64 - lo) / (hi - lo) } else { 0.0 };

    let mut content = BTreeMap::new();
    for k in keys(&content_key) {
        let rs = of(&content_key, &k);
        let n = rs.len();
        let ips = count_distinct(rs.iter().map(|r| r.client_ip));
        let nodes = count_distinct(rs.iter().map(|r| r.node_id.clone()));
        let row = vec![
            n as f64,
            pop(&k),
            frac(rs.iter().filter(|r| hit(r)).count(), n),
            frac(n, ips),
            frac(n, nodes),
            jaccard_dynamicity(&rs, w, |r| r.client_ip),
        ];
        mixes.insert((Perspective::Content, k.clone()), mix(&rs));
        content.insert(k, (row, n as u64));
    }
    tables.insert(Perspective::Content, content);

    let ip_key = |r: &AccessLogRecord| r.client_ip.to_string();
    let avg_pop = |rs: &[&AccessLogRecord]| rs.iter().map(|r| pop(&r.content_path)).sum::<f64>() / rs.len() as f64;
    let cfg = FeatureConfig::default();
    let mut per_ip = Vec::new();
    let mut ip_table = BTreeMap::new();
    for k in keys(&ip_key) {
        let rs = of(&ip_key, &k);
        let n = rs.len();
        let first = rs.iter().map(|r| r.timestamp).min().unwrap();
        let last = rs.iter().map(|r| r.timestamp).max().unwrap();
        let interval = if n == 1 { w.duration_secs as f64 } else { (last - first).num_seconds() as f64 / (n - 1) as f64 };
        let nodes = count_distinct(rs.iter().map(|r| r.node_id.clone()));
        let contents = count_distinct(rs.iter().map(|r| r.content_path.clone()));
        let errors = rs.iter().filter(|r| error(r)).count();
        let mobile = rs.iter().filter(|r| cfg.mobile_agents.contains(&r.agent_type.to_lowercase())).count();
        let row = vec![
            n as f64,
            interval,
            nodes as f64,
            contents as f64,
            frac(n, contents),
            frac(n, nodes),
            avg_pop(&rs),
            frac(rs.iter().filter(|r| hit(r)).count(), n),
            frac(errors, n),
            frac(mobile, n),
        ];
        per_ip.push((rs[0].client_ip, avg_pop(&rs), frac(errors, n)));
        mixes.insert((Perspective::Ip, k.clone()), mix(&rs));
        ip_table.insert(k, (row, n as u64));
    }
    tables.insert(Perspective::Ip, ip_table);

    let mut pops: Vec<f64> = per_ip.iter().map(|p| p.1).collect();
    pops.sort_by(f64::total_cmp);
    let m = pops.len();
    let median = if m % 2 == 1 { pops[m / 2] } else { (pops[m / 2 - 1] + pops[m / 2]) / 2.0 };
    let legit: BTreeSet<IpAddr> = per_ip
        .iter()
        .filter(|p| p.1 >= median && p.2 <= cfg.legit_max_error_rate)
        .map(|p| p.0)
        .collect();

    let node_key = |r: &AccessLogRecord| r.node_id.clone();
    let mut node_table = BTreeMap::new();
    for k in keys(&node_key) {
        let rs = of(&node_key, &k);
        let n = rs.len();
        let hits = rs.iter().filter(|r| hit(r)).count();
        let lg: Vec<_> = rs.iter().filter(|r| legit.contains(&r.client_ip)).collect();
        let legit_rate = if lg.is_empty() { frac(hits, n) } else { frac(lg.iter().filter(|r| hit(r)).count(), lg.len()) };
        let bytes: u128 = rs.iter().map(|r| r.bytes as u128).sum();
        let ms: u128 = rs.iter().map(|r| r.delivery_time_ms as u128).sum();
        let row = vec![
            frac(hits, n),
            legit_rate,
            if ms == 0 { 0.0 } else { bytes as f64 / ms as f64 / 1000.0 },
            frac(rs.iter().filter(|r| error(r)).count(), n),
            avg_pop(&rs),
            jaccard_dynamicity(&rs, w, |r| r.content_path.clone()),
            jaccard_dynamicity(&rs, w, |r| r.client_ip),
        ];
        mixes.insert((Perspective::Node, k.clone()), mix(&rs));
        node_table.insert(k, (row, n as u64));
    }
    tables.insert(Perspective::Node, node_table);

    let off_key = |r: &AccessLogRecord| r.offering_id.clone();
    let mut off_table = BTreeMap::new();
    let mut profiles = BTreeMap::new();
    let modal = |vals: Vec<String>| {
        let mut c: BTreeMap<String, usize> = BTreeMap::new();
        for v in vals {
            *c.entry(v).or_default() += 1;
        }
        let best = *c.values().max().unwrap();
        c.into_iter().find(|(_, n)| *n == best).unwrap().0
    };
    for k in keys(&off_key) {
        let rs = of(&off_key, &k);
        let n = rs.len();
        let row = vec![
            n as f64,
            count_distinct(rs.iter().map(|r| r.node_id.clone())) as f64,
            avg_pop(&rs),
            frac(rs.iter().filter(|r| hit(r)).count(), n),
        ];
        profiles.insert(
            k.clone(),
            (
                modal(rs.iter().map(|r| r.service_type.clone()).collect()),
                modal(rs.iter().map(|r| r.content_type.clone()).collect()),
            ),
        );
        off_table.insert(k, (row, n as u64));
    }
    tables.insert(Perspective::Offering, off_table);
    Oracle { tables, mixes, profiles }
}

fn compare(table: &PerspectiveTable, want: &BTreeMap<String, (Vec<f64>, u64)>, case: u64) {
    let p = table.perspective;
    assert_eq!(table.keys, want.keys().cloned().collect::<Vec<_>>(), "case {case} {p}: keys");
    for (i, key) in table.keys.iter().enumerate() {
        let (row, n) = &want[key];
        assert_eq!(table.request_counts[i], *n, "case {case} {p} {key}: request count");
        for (j, name) in table.feature_names.iter().enumerate() {
            let (got, exp) = (table.values[i][j], row[j]);
            if INTEGER_FEATURES.contains(&name.as_str()) {
                assert_eq!(got.to_bits(), exp.to_bits(), "case {case} {p} {key} {name}");
            } else {
                assert!((got - exp).abs() <= 1e-12, "case {case} {p} {key} {name}: {got} vs {exp}");
            }
        }
    }
}

/// Build all four tables for random log `case` and check them against the oracle.
pub fn check_case(case: u64) {
    let (records, window) = random_log(case);
    let want = oracle(&records, &window);
    let fs = build_all(&records, &window, &FeatureConfig::default()).unwrap();
    for p in Perspective::ALL {
        compare(fs.raw(p), &want.tables[&p], case);
    }
    for p in [Perspective::Content, Perspective::Node, Perspective::Ip] {
        let t = fs.raw(p);
        for key in &t.keys {
            let got = t.side_data[key].offering_mix().unwrap();
            let exp = &want.mixes[&(p, key.clone())];
            assert_eq!(got.0.keys().collect::<Vec<_>>(), exp.keys().collect::<Vec<_>>());
            for (o, share) in exp {
                assert!((got.0[o] - share).abs() <= 1e-12, "case {case} {p} {key} mix {o}");
            }
        }
    }
    for (key, (svc, ctype)) in &want.profiles {
        match &fs.raw(Perspective::Offering).side_data[key] {
            SideData::OfferingProfile {
                service_type,
                content_type,
            } => assert_eq!((service_type, content_type), (svc, ctype), "case {case} offering {key}"),
            other => panic!("unexpected side data {other:?}"),
        }
    }
}
