use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::detect::{entity_key, AnomalyCandidate};
use crate::ingest::AccessLogRecord;
use crate::perspectives::{Perspective, WindowSpec};

/// Request-weighted IP↔node, content↔node and IP↔content links around the
/// candidates. Vertices are `perspective:entity` keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkGraph {
    pub vertices: BTreeSet<String>,
    /// Symmetric adjacency: `adjacency[a][b] == adjacency[b][a]`.
    pub adjacency: BTreeMap<String, BTreeMap<String, u64>>,
}

impl LinkGraph {
    pub fn add_edge(&mut self, a: String, b: String, w: u64) {
        *self.adjacency.entry(a.clone()).or_default().entry(b.clone()).or_default() += w;
        *self.adjacency.entry(b.clone()).or_default().entry(a.clone()).or_default() += w;
        self.vertices.insert(a);
        self.vertices.insert(b);
    }

    pub fn weight(&self, a: &str, b: &str) -> u64 {
        self.adjacency.get(a).and_then(|m| m.get(b)).copied().unwrap_or(0)
    }

    pub fn neighbors(&self, key: &str) -> impl Iterator<Item = (&str, u64)> {
        self.adjacency
            .get(key)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, w)| (k.as_str(), *w)))
    }

    fn total_between(&self, a: Perspective, b: Perspective) -> u64 {
        let (pa, pb) = (format!("{a}:"), format!("{b}:"));
        self.adjacency
            .iter()
            .filter(|(k, _)| k.starts_with(&pa))
            .flat_map(|(_, m)| m.iter())
            .filter(|(k, _)| k.starts_with(&pb))
            .map(|(_, w)| *w)
            .sum()
    }

    /// Summed IP↔node weight; equals the request count when every request
    /// touches a candidate.
    pub fn total_ip_node_weight(&self) -> u64 {
        self.total_between(Perspective::Ip, Perspective::Node)
    }

    pub fn total_content_node_weight(&self) -> u64 {
        self.total_between(Perspective::Content, Perspective::Node)
    }
}

/// Keep each edge with at least one candidate endpoint.
pub fn build_link_graph(records: &[AccessLogRecord], window: &WindowSpec, candidates: &[AnomalyCandidate]) -> LinkGraph {
    let mut ips: HashSet<IpAddr> = HashSet::new();
    let mut nodes: HashSet<&str> = HashSet::new();
    let mut contents: HashSet<&str> = HashSet::new();
    for c in candidates {
        match c.perspective {
            Perspective::Ip => {
                if let Ok(ip) = c.entity.parse() {
                    ips.insert(ip);
                }
            }
            Perspective::Node => {
                nodes.insert(&c.entity);
            }
            Perspective::Content => {
                contents.insert(&c.entity);
            }
            Perspective::Offering => {}
        }
    }
    let mut ip_node: HashMap<(IpAddr, &str), u64> = HashMap::new();
    let mut content_node: HashMap<(&str, &str), u64> = HashMap::new();
    let mut ip_content: HashMap<(IpAddr, &str), u64> = HashMap::new();
    for r in records.iter().filter(|r| window.contains(r)) {
        let (ip_c, node_c, content_c) = (
            ips.contains(&r.client_ip),
            nodes.contains(r.node_id.as_str()),
            contents.contains(r.content_path.as_str()),
        );
        if ip_c || node_c {
            *ip_node.entry((r.client_ip, &r.node_id)).or_default() += 1;
        }
        if content_c || node_c {
            *content_node.entry((&r.content_path, &r.node_id)).or_default() += 1;
        }
        if ip_c || content_c {
            *ip_content.entry((r.client_ip, &r.content_path)).or_default() += 1;
        }
    }
    let mut g = LinkGraph::default();
    for c in candidates {
        g.vertices.insert(c.key());
    }
    let ipk = |ip: IpAddr| entity_key(Perspective::Ip, &ip.to_string());
    for ((ip, node), w) in ip_node {
        g.add_edge(ipk(ip), entity_key(Perspective::Node, node), w);
    }
    for ((content, node), w) in content_node {
        g.add_edge(entity_key(Perspective::Content, content), entity_key(Perspective::Node, node), w);
    }
    for ((ip, content), w) in ip_content {
        g.add_edge(ipk(ip), entity_key(Perspective::Content, content), w);
    }
    g
}
