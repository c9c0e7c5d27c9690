//! Labelled synthetic access logs: benign Zipf traffic through per-node LRU
//! caches plus injected DoS floods, cache pollution and a flash crowd.

pub mod inject;
pub mod lru;
pub mod truth;
pub mod workload;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use inject::{inject_cpa, inject_crowd_event, inject_dos, CpaConfig, CrowdConfig, DosConfig};
pub use lru::LruCache;
pub use truth::{score_against_truth, ClassScore, GroundTruth, Interval, TruthScore};
pub use workload::{generate_baseline, HashRing, Workload, WorkloadConfig};

use crate::correct::OfferingSet;
use crate::error::{Error, Result};
use crate::ingest::{format_line, AccessLogRecord};
use crate::pipeline::Artifacts;

pub const LOG_FILE: &str = "access.log";
pub const TRUTH_FILE: &str = "truth.json";
pub const OFFERINGS_FILE: &str = "offerings.toml";

/// Full generator configuration, loadable from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub workload: WorkloadConfig,
    pub dos: DosConfig,
    pub cpa: CpaConfig,
    pub crowd: CrowdConfig,
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.workload.seed = seed;
        self
    }

    /// Benign traffic only.
    pub fn benign(mut self) -> Self {
        self.dos.attackers = 0;
        self.cpa.attackers = 0;
        self.crowd.ips = 0;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read synth config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("synth config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub records: Vec<AccessLogRecord>,
    pub truth: GroundTruth,
    pub offerings: OfferingSet,
}

impl Synthesis {
    /// Log text, ground truth and offering declarations.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = Artifacts::stage(dir)?;
        self.write_into(&mut out)?;
        out.commit().map(|_| ())
    }

    pub fn write_into(&self, out: &mut Artifacts) -> Result<()> {
        let log = out.path(LOG_FILE);
        let file = std::fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in &self.records {
            writeln!(w, "{}", format_line(r)).map_err(|e| Error::io(&log, e))?;
        }
        w.flush().map_err(|e| Error::io(&log, e))?;
        out.write_json(TRUTH_FILE, &self.truth)?;
        out.write(OFFERINGS_FILE, self.offerings.to_toml_string())
    }
}

/// Baseline plus every configured injection.
pub fn generate(cfg: &SynthConfig) -> Result<Synthesis> {
    let mut w = generate_baseline(&cfg.workload).map_err(|e| Error::Config(format!("synth workload: {e}")))?;
    inject_dos(&mut w, &cfg.dos);
    inject_cpa(&mut w, &cfg.cpa);
    inject_crowd_event(&mut w, &cfg.crowd);
    w.truth.check().map_err(Error::Config)?;
    Ok(Synthesis {
        records: w.records(),
        truth: w.truth.clone(),
        offerings: w.offering_set(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SynthConfig::default().with_seed(11);
        let text = toml::to_string(&cfg).unwrap();
        let back: SynthConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: SynthConfig = toml::from_str("[workload]\nnodes = 5\n").unwrap();
        assert_eq!(partial.workload.nodes, 5);
        assert_eq!(partial.dos, DosConfig::default());
    }
}
