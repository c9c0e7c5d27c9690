use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorrectionConfig;
use crate::detect::{AnomalyCandidate, Attack, DemotionReason, Mark, CROWD_SUSPECT};
use crate::error::{Error, Result};
use crate::ingest::AccessLogRecord;
use crate::perspectives::{OfferingMix, Perspective, PerspectiveTable, WindowSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Purpose {
    #[default]
    Production,
    Test,
    Maintenance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExpectedProfile {
    Popular,
    LongTail,
    #[default]
    Any,
}

impl ExpectedProfile {
    /// Whether the declared profile accounts for the anomaly: a long tail
    /// explains unpopular requests, a popular profile explains heavy load.
    pub fn explains(self, attack: Attack) -> bool {
        match self {
            ExpectedProfile::Any => true,
            ExpectedProfile::LongTail => attack == Attack::Cpa,
            ExpectedProfile::Popular => attack == Attack::Dos,
        }
    }
}

/// Declared configuration of one offering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferingConfig {
    pub offering_id: String,
    /// Empty accepts any service type.
    #[serde(default)]
    pub service_type: String,
    /// Empty accepts any content type.
    #[serde(default)]
    pub content_types: Vec<String>,
    #[serde(default)]
    pub purpose: Purpose,
    #[serde(default)]
    pub profile: ExpectedProfile,
}

impl OfferingConfig {
    /// Unconfigured offerings are assumed to be production traffic.
    pub fn implicit(id: &str) -> Self {
        OfferingConfig {
            offering_id: id.to_string(),
            service_type: String::new(),
            content_types: Vec::new(),
            purpose: Purpose::Production,
            profile: ExpectedProfile::Any,
        }
    }

    pub fn admits(&self, r: &AccessLogRecord) -> bool {
        let service_ok = self.service_type.is_empty() || self.service_type.eq_ignore_ascii_case(&r.service_type);
        let content_ok =
            self.content_types.is_empty() || self.content_types.iter().any(|t| t.eq_ignore_ascii_case(&r.content_type));
        service_ok && content_ok
    }

    pub fn is_benign_purpose(&self) -> bool {
        matches!(self.purpose, Purpose::Test | Purpose::Maintenance)
    }
}

/// The offering configuration file: a list of `[[offering]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferingSet {
    #[serde(default, rename = "offering")]
    pub offerings: Vec<OfferingConfig>,
}

impl OfferingSet {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let set: OfferingSet = toml::from_str(text).map_err(|e| e.to_string())?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read offering config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("offering config {}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("offering config serializes")
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for o in &self.offerings {
            if o.offering_id.is_empty() {
                return Err("offering with empty offering_id".into());
            }
            if !seen.insert(o.offering_id.as_str()) {
                return Err(format!("duplicate offering_id {:?}", o.offering_id));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&OfferingConfig> {
        self.offerings.iter().find(|o| o.offering_id == id)
    }

    pub fn resolve(&self, id: &str) -> OfferingConfig {
        self.get(id).cloned().unwrap_or_else(|| OfferingConfig::implicit(id))
    }
}

/// What each candidate's traffic looked like against the declarations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OfferingObservations {
    /// Candidate key → share of its requests per offering.
    pub mix: BTreeMap<String, OfferingMix>,
    /// Candidate key → requests that contradict their offering's declaration.
    pub mismatched: BTreeMap<String, u64>,
    /// Offering → requests that contradict its declaration.
    pub offering_mismatched: BTreeMap<String, u64>,
}

/// Tally, per candidate, its offering mix and its requests that an
/// offering's declaration does not admit.
pub fn observe_offerings(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    offerings: &OfferingSet,
    candidates: &[AnomalyCandidate],
) -> OfferingObservations {
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
    let configs: HashMap<&str, &OfferingConfig> = offerings.offerings.iter().map(|o| (o.offering_id.as_str(), o)).collect();
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut obs = OfferingObservations::default();
    for r in records.iter().filter(|r| window.contains(r)) {
        let bad = configs.get(r.offering_id.as_str()).is_some_and(|o| !o.admits(r));
        if bad {
            *obs.offering_mismatched.entry(r.offering_id.clone()).or_default() += 1;
        }
        let mut keys = Vec::with_capacity(3);
        if ips.contains(&r.client_ip) {
            keys.push(format!("{}:{}", Perspective::Ip, r.client_ip));
        }
        if nodes.contains(r.node_id.as_str()) {
            keys.push(format!("{}:{}", Perspective::Node, r.node_id));
        }
        if contents.contains(r.content_path.as_str()) {
            keys.push(format!("{}:{}", Perspective::Content, r.content_path));
        }
        for k in keys {
            if bad {
                *obs.mismatched.entry(k.clone()).or_default() += 1;
            }
            *counts.entry(k).or_default().entry(r.offering_id.clone()).or_default() += 1;
        }
    }
    obs.mix = counts.iter().map(|(k, c)| (k.clone(), OfferingMix::from_counts(c))).collect();
    obs
}

/// Offering analysis and final statuses.
///
/// Benign test or maintenance offerings whose declared profile explains the
/// anomaly demote their candidates; DoS candidates carrying traffic their
/// offering was not declared for gain a mark; crowd suspects without such a
/// mark are demoted; everything left needs `confirm_marks` marks.
pub fn offering_validate(
    mut cands: Vec<AnomalyCandidate>,
    offerings: &OfferingSet,
    offering_table: &PerspectiveTable,
    obs: &OfferingObservations,
    cfg: &CorrectionConfig,
) -> Vec<AnomalyCandidate> {
    for c in cands.iter_mut().filter(|c| c.is_open()) {
        let key = c.key();
        if let Some((dominant, share)) = obs.mix.get(&key).and_then(|m| m.dominant()) {
            let conf = offerings.resolve(dominant);
            if conf.is_benign_purpose() && conf.profile.explains(c.attack) {
                let observed = offering_table
                    .value(dominant, "request_popularity")
                    .map_or(String::new(), |p| format!(", observed popularity {p:.4}"));
                c.demote(
                    DemotionReason::BenignOffering,
                    format!(
                        "{:.0}% of requests on {dominant}, declared {:?}/{:?}{observed}",
                        share * 100.0,
                        conf.purpose,
                        conf.profile
                    ),
                );
                continue;
            }
        }
        let bad = obs.mismatched.get(&key).copied().unwrap_or(0);
        if c.attack == Attack::Dos && bad >= cfg.mismatch_min_requests {
            c.add_mark(Mark::OfferingMismatch, format!("{bad} requests inconsistent with their offering declaration"));
        }
    }
    for c in cands.iter_mut().filter(|c| c.is_open()) {
        let n = c.marks.len();
        if c.tags.contains(CROWD_SUSPECT) && !c.marks.contains(&Mark::OfferingMismatch) {
            c.demote(DemotionReason::CrowdEvent, "crowd-like burst with consistent offering traffic");
        } else if n >= cfg.confirm_marks {
            c.confirm(format!("confirmed with {n} corroboration marks"));
        } else {
            c.demote(
                DemotionReason::InsufficientCorroboration,
                format!("{n} corroboration mark(s), {} needed", cfg.confirm_marks),
            );
        }
    }
    cands
}
