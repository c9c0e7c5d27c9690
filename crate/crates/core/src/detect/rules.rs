use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DetectError;
use crate::error::{Error, Result};
use crate::perspectives::{Perspective, CONTENT_FEATURES, IP_FEATURES, NODE_FEATURES, OFFERING_FEATURES};

pub const DEFAULT_QUANTILE: f64 = 0.1;
pub const DEFAULT_MATCH_RATIO: f64 = 0.75;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Low,
    High,
    Large,
    Small,
    Short,
    /// Either tail.
    HighOrLow,
    LargeOrSmall,
}

impl Direction {
    pub fn lower_tail(self) -> bool {
        !matches!(self, Direction::High | Direction::Large)
    }

    pub fn upper_tail(self) -> bool {
        matches!(
            self,
            Direction::High | Direction::Large | Direction::HighOrLow | Direction::LargeOrSmall
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Low => "LOW",
            Direction::High => "HIGH",
            Direction::Large => "LARGE",
            Direction::Small => "SMALL",
            Direction::Short => "SHORT",
            Direction::HighOrLow => "HIGH_OR_LOW",
            Direction::LargeOrSmall => "LARGE_OR_SMALL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Attack {
    Dos,
    Cpa,
    Unknown,
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attack::Dos => "DOS",
            Attack::Cpa => "CPA",
            Attack::Unknown => "UNKNOWN",
        })
    }
}

fn default_quantile() -> f64 {
    DEFAULT_QUANTILE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRule {
    pub perspective: Perspective,
    pub feature: String,
    pub direction: Direction,
    pub attack: Attack,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

impl PatternRule {
    pub fn new(perspective: Perspective, feature: &str, direction: Direction, attack: Attack) -> Self {
        PatternRule {
            perspective,
            feature: feature.to_string(),
            direction,
            attack,
            quantile: DEFAULT_QUANTILE,
        }
    }

    /// Stable identifier used as the evidence key.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.attack,
            self.perspective,
            self.feature,
            self.direction.as_str()
        )
    }
}

fn default_match_ratio() -> f64 {
    DEFAULT_MATCH_RATIO
}

fn default_min_confidence() -> f64 {
    DEFAULT_MIN_CONFIDENCE
}

fn default_version() -> String {
    "custom".to_string()
}

/// A versioned set of attack patterns plus the labelling constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default = "default_match_ratio")]
    pub match_ratio: f64,
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f64,
    pub rules: Vec<PatternRule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        use Attack::{Cpa, Dos};
        use Direction::*;
        use Perspective::{Content, Ip, Node, Offering};
        let r = PatternRule::new;
        RuleSet {
            version: "builtin-1".to_string(),
            match_ratio: DEFAULT_MATCH_RATIO,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            rules: vec![
                // cache pollution
                r(Content, "popularity", Low, Cpa),
                r(Content, "request_per_ip_ratio", HighOrLow, Cpa),
                r(Content, "request_per_node_ratio", High, Cpa),
                r(Node, "cache_hit_rate", Low, Cpa),
                r(Node, "cache_hit_rate_legitimate_ips", Low, Cpa),
                r(Node, "data_transfer_rate", Low, Cpa),
                r(Node, "average_request_popularity", Low, Cpa),
                r(Ip, "number_of_requests", Large, Cpa),
                r(Ip, "average_request_interval", Short, Cpa),
                r(Ip, "number_of_nodes", Small, Cpa),
                r(Ip, "number_of_contents", LargeOrSmall, Cpa),
                r(Ip, "average_request_popularity", Low, Cpa),
                r(Offering, "request_popularity", Low, Cpa),
                // denial of service
                r(Node, "cache_hit_rate", Low, Dos),
                r(Node, "cache_hit_rate_legitimate_ips", Low, Dos),
                r(Node, "data_transfer_rate", Low, Dos),
                r(Node, "request_error_rate", High, Dos),
                r(Ip, "number_of_requests", Large, Dos),
                r(Ip, "average_request_interval", Short, Dos),
                r(Ip, "number_of_nodes", Small, Dos),
                r(Ip, "cache_hit_rate", Low, Dos),
                r(Ip, "request_error_rate", High, Dos),
                r(Offering, "cache_hit_rate", Low, Dos),
            ],
        }
    }
}

fn known_features(p: Perspective) -> &'static [&'static str] {
    match p {
        Perspective::Content => &CONTENT_FEATURES,
        Perspective::Node => &NODE_FEATURES,
        Perspective::Ip => &IP_FEATURES,
        Perspective::Offering => &OFFERING_FEATURES,
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return Err(DetectError::InvalidConfig(format!(
                "match_ratio {} outside (0, 1]",
                self.match_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(DetectError::InvalidConfig(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if !known_features(rule.perspective).contains(&rule.feature.as_str()) {
                return Err(DetectError::UnknownFeature {
                    perspective: rule.perspective,
                    feature: rule.feature.clone(),
                });
            }
            if !(rule.quantile > 0.0 && rule.quantile < 1.0) {
                return Err(DetectError::InvalidQuantile(rule.quantile));
            }
            if rule.attack == Attack::Unknown {
                return Err(DetectError::InvalidConfig(format!("rule {} has no attack type", rule.id())));
            }
            if !seen.insert(rule.id()) {
                return Err(DetectError::InvalidConfig(format!("duplicate rule {}", rule.id())));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DetectError> {
        let set: RuleSet = toml::from_str(s).map_err(|e| DetectError::InvalidConfig(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read rule file {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("rule file {}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("rule set serializes")
    }

    pub fn for_perspective(&self, p: Perspective) -> impl Iterator<Item = &PatternRule> {
        self.rules.iter().filter(move |r| r.perspective == p)
    }

    /// Copy with every rule's quantile replaced.
    pub fn with_quantile(&self, q: f64) -> Self {
        let mut out = self.clone();
        out.rules.iter_mut().for_each(|r| r.quantile = q);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_validate() {
        RuleSet::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let rules = RuleSet::default();
        let back = RuleSet::from_toml_str(&rules.to_toml_string()).unwrap();
        assert_eq!(back, rules);
    }

    #[test]
    fn quantile_defaults_when_omitted() {
        let text = r#"
            [[rules]]
            perspective = "NODE"
            feature = "request_error_rate"
            direction = "HIGH"
            attack = "DOS"
        "#;
        let set = RuleSet::from_toml_str(text).unwrap();
        assert_eq!(set.rules[0].quantile, DEFAULT_QUANTILE);
        assert_eq!(set.match_ratio, DEFAULT_MATCH_RATIO);
    }

    #[test]
    fn rejects_unknown_feature() {
        let text = r#"
            [[rules]]
            perspective = "IP"
            feature = "bogus"
            direction = "LOW"
            attack = "CPA"
        "#;
        assert!(matches!(
            RuleSet::from_toml_str(text),
            Err(DetectError::UnknownFeature { .. })
        ));
    }
}
