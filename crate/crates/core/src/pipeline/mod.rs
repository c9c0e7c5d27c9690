//! End-to-end orchestration: ingest, featurize, identify, correct, report.
//!
//! Every stage is a pure function of its inputs so the CLI can run the
//! whole chain in memory or resume from the interchange files of any stage.

pub mod artifacts;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use artifacts::{
    read_json, Artifacts, CONFIRMED_FILE, CORRECTED_FILE, FEATURES_FILE, IDENTIFIED_FILE, RECORDS_FILE, REPORT_FILE,
    STATS_FILE, SUMMARY_FILE,
};

use crate::bayesopt::{gmm_selection_objective, iforest_contamination_objective, optimize, BoTrace, SearchSpace};
use crate::correct::{
    build_link_graph, cross_perspective_validate, node_evidence_map, observe_offerings, offering_validate, summarize,
    temporal_corroborate, time_series_events, AuditTrail, CorrectionConfig, ForensicReport, OfferingSet, TimeSeriesEvent,
};
use crate::detect::{
    label_clusters_with_verdicts, label_outlier_nodes, thresholds_for, AnomalyCandidate, ClusterVerdict, RuleCut,
    RuleSet,
};
use crate::error::{Error, Result};
use crate::gmm::{assign, fit_em_default, GmmParams};
use crate::iforest::{fit_forest, flag_by_contamination, score_all};
use crate::ingest::{read_records, AccessLogRecord, IngestStats, LogSchema};
use crate::perspectives::{build_all, popularity_map, FeatureConfig, FeatureSet, Perspective, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

/// Everything a run needs besides the log lines themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    /// Log layout; the extended default when absent.
    pub schema: Option<PathBuf>,
    /// Defaults to the sub-window-aligned span of the records.
    pub window_start: Option<DateTime<Utc>>,
    pub window_hours: Option<f64>,
    pub sub_window_secs: i64,
    pub rules: Option<PathBuf>,
    pub offerings: Option<PathBuf>,
    /// Mandatory: every random choice derives from it.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub bo_budget_gmm: usize,
    pub bo_budget_iforest: usize,
    /// Fixed component counts skip the search.
    pub gmm_k_ip: Option<usize>,
    pub gmm_k_content: Option<usize>,
    pub contamination: Option<f64>,
    pub k_min: usize,
    pub k_max: usize,
    pub contamination_min: f64,
    pub contamination_max: f64,
    pub n_trees: usize,
    pub subsample: usize,
    pub features: FeatureConfig,
    pub correction: CorrectionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            schema: None,
            window_start: None,
            window_hours: None,
            sub_window_secs: crate::perspectives::DEFAULT_SUB_WINDOW_SECS,
            rules: None,
            offerings: None,
            seed: None,
            out: PathBuf::from("perspecta-out"),
            formats: vec![OutputFormat::Json, OutputFormat::Text, OutputFormat::Csv],
            bo_budget_gmm: 10,
            bo_budget_iforest: 10,
            gmm_k_ip: None,
            gmm_k_content: None,
            contamination: None,
            k_min: 2,
            k_max: 50,
            contamination_min: 0.005,
            contamination_max: 0.25,
            n_trees: 100,
            subsample: 256,
            features: FeatureConfig::default(),
            correction: CorrectionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seed.is_none() {
            return bad("a seed is required for reproducibility; pass --seed".into());
        }
        if (self.gmm_k_ip.is_none() || self.gmm_k_content.is_none()) && self.bo_budget_gmm < 3 {
            return bad(format!("--bo-budget-gmm must be at least 3, got {}", self.bo_budget_gmm));
        }
        if self.contamination.is_none() && self.bo_budget_iforest < 3 {
            return bad(format!("--bo-budget-iforest must be at least 3, got {}", self.bo_budget_iforest));
        }
        if self.k_min < 2 || self.k_max <= self.k_min {
            return bad(format!("component range [{}, {}] must satisfy 2 <= min < max", self.k_min, self.k_max));
        }
        let c_ok = |c: f64| c > 0.0 && c <= 0.5;
        if !c_ok(self.contamination_min) || !c_ok(self.contamination_max) || self.contamination_min >= self.contamination_max {
            return bad("contamination range must lie in (0, 0.5] with min < max".into());
        }
        if let Some(c) = self.contamination {
            if !c_ok(c) {
                return bad(format!("contamination {c} outside (0, 0.5]"));
            }
        }
        if self.sub_window_secs <= 0 {
            return bad("--sub-window-secs must be positive".into());
        }
        if let Some(h) = self.window_hours {
            if !(h > 0.0) {
                return bad("--window-hours must be positive".into());
            }
        }
        if self.formats.is_empty() {
            return bad("at least one --format is required".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn load_schema(&self) -> Result<LogSchema> {
        match &self.schema {
            Some(p) => LogSchema::load(p),
            None => Ok(LogSchema::extended()),
        }
    }

    pub fn load_rules(&self) -> Result<RuleSet> {
        match &self.rules {
            Some(p) => RuleSet::load(p),
            None => Ok(RuleSet::default()),
        }
    }

    pub fn load_offerings(&self) -> Result<OfferingSet> {
        match &self.offerings {
            Some(p) => OfferingSet::load(p),
            None => Ok(OfferingSet::default()),
        }
    }

    /// The analysis window: explicit, or the aligned span of the records.
    pub fn window_for(&self, records: &[AccessLogRecord]) -> Result<WindowSpec> {
        let w = match (self.window_start, self.window_hours) {
            (Some(start), Some(h)) => WindowSpec::new(start, (h * 3600.0).round() as i64, self.sub_window_secs)?,
            (start, hours) => {
                let cover = WindowSpec::covering(records, self.sub_window_secs).ok_or(
                    crate::perspectives::FeatureError::EmptyWindow {
                        perspective: Perspective::Content,
                    },
                )?;
                let start = start.unwrap_or(cover.start);
                let duration = match hours {
                    Some(h) => (h * 3600.0).round() as i64,
                    None => (cover.end_secs() - start.timestamp()).max(self.sub_window_secs),
                };
                WindowSpec::new(start, duration, self.sub_window_secs)?
            }
        };
        Ok(w)
    }
}

/// Seeds of the independent random consumers in one run.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Output of the identification phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub candidates: Vec<AnomalyCandidate>,
    pub thresholds: BTreeMap<Perspective, Vec<RuleCut>>,
    pub bo_traces: BTreeMap<String, BoTrace>,
    /// Chosen hyperparameters, e.g. `gmm_k_ip`, `contamination`.
    pub model: BTreeMap<String, f64>,
    pub verdicts: BTreeMap<Perspective, Vec<ClusterVerdict>>,
    pub node_scores: BTreeMap<String, f64>,
}

/// Output of the analysis phase, ready to summarize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub window: WindowSpec,
    pub candidates: Vec<AnomalyCandidate>,
    pub events: Vec<TimeSeriesEvent>,
    pub audit: AuditTrail,
}

/// Read, parse and sanitize the configured inputs.
pub fn ingest_stage(cfg: &PipelineConfig) -> Result<(Vec<AccessLogRecord>, IngestStats)> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("no input files given; pass --input".into()));
    }
    let schema = cfg.load_schema()?;
    let ing = read_records(&cfg.inputs, &schema)?;
    Ok((ing.records, ing.stats))
}

pub fn featurize_stage(records: &[AccessLogRecord], cfg: &PipelineConfig) -> Result<FeatureSet> {
    let window = cfg.window_for(records)?;
    Ok(build_all(records, &window, &cfg.features)?)
}

struct Clustered {
    params: GmmParams,
    trace: Option<BoTrace>,
}

fn cluster(data: &[Vec<f64>], fixed: Option<usize>, cfg: &PipelineConfig, seed: u64) -> Result<Clustered> {
    let n = data.len();
    let hi = cfg.k_max.min(n);
    if let Some(k) = fixed {
        return Ok(Clustered {
            params: fit_em_default(data, k, seed)?,
            trace: None,
        });
    }
    if hi <= cfg.k_min {
        return Ok(Clustered {
            params: fit_em_default(data, cfg.k_min.min(n).max(1), seed)?,
            trace: None,
        });
    }
    // keep every fit so the winner need not be refitted
    let mut fits: HashMap<usize, GmmParams> = HashMap::new();
    let trace = optimize(
        |k| {
            let k = k as usize;
            match fit_em_default(data, k, seed) {
                Ok(p) => {
                    let v = crate::bayesopt::bic(&p, n);
                    fits.insert(k, p);
                    v
                }
                Err(_) => gmm_selection_objective(data, k, seed),
            }
        },
        SearchSpace::integer(cfg.k_min as i64, hi as i64),
        cfg.bo_budget_gmm,
        seed,
    );
    let best = trace
        .best
        .filter(|b| b.value.is_finite())
        .map(|b| b.param as usize)
        .ok_or_else(|| Error::Config("no feasible component count in the search range".into()))?;
    let params = match fits.remove(&best) {
        Some(p) => p,
        None => fit_em_default(data, best, seed)?,
    };
    Ok(Clustered {
        params,
        trace: Some(trace),
    })
}

/// GMM on the IP and content tables, isolation forest on the node table,
/// then pattern labelling. Tables too small for quantile thresholds are skipped.
pub fn identify_stage(features: &FeatureSet, rules: &RuleSet, cfg: &PipelineConfig) -> Result<Identification> {
    let seed = cfg.seed();
    let mut id = Identification {
        candidates: Vec::new(),
        thresholds: BTreeMap::new(),
        bo_traces: BTreeMap::new(),
        model: BTreeMap::new(),
        verdicts: BTreeMap::new(),
        node_scores: BTreeMap::new(),
    };
    for (p, fixed, stream, label) in [
        (Perspective::Ip, cfg.gmm_k_ip, 1, "gmm_k_ip"),
        (Perspective::Content, cfg.gmm_k_content, 2, "gmm_k_content"),
    ] {
        let table = features.normalized(p);
        if table.n_rows() < 4 {
            continue;
        }
        let c = cluster(&table.values, fixed, cfg, sub_seed(seed, stream))?;
        let assignment = assign(&table.values, &c.params)?;
        let (cands, verdicts) = label_clusters_with_verdicts(table, &assignment, rules)?;
        id.model.insert(label.to_string(), c.params.k as f64);
        if let Some(t) = c.trace {
            id.bo_traces.insert(label.to_string(), t);
        }
        id.thresholds.insert(p, thresholds_for(table, rules)?);
        id.verdicts.insert(p, verdicts);
        id.candidates.extend(cands);
    }

    let nodes = features.normalized(Perspective::Node);
    if nodes.n_rows() >= 4 {
        let forest = fit_forest(&nodes.values, cfg.n_trees, cfg.subsample, sub_seed(seed, 3))?;
        let scores = score_all(&forest, &nodes.values)?;
        let by_key: BTreeMap<String, f64> = nodes.keys.iter().cloned().zip(scores.iter().copied()).collect();
        let contamination = match cfg.contamination {
            Some(c) => c,
            None => {
                let trace = optimize(
                    |c| iforest_contamination_objective(&scores, c),
                    SearchSpace::real(cfg.contamination_min, cfg.contamination_max),
                    cfg.bo_budget_iforest,
                    sub_seed(seed, 4),
                );
                let c = trace.best_param().unwrap_or(cfg.contamination_min);
                id.bo_traces.insert("contamination".to_string(), trace);
                c
            }
        };
        let flagged = flag_by_contamination(&by_key, contamination)?;
        id.model.insert("contamination".to_string(), contamination);
        id.model.insert("iforest_trees".to_string(), forest.n_trees as f64);
        id.model.insert("iforest_subsample".to_string(), forest.subsample_size as f64);
        id.candidates.extend(label_outlier_nodes(nodes, &flagged, &by_key, rules)?);
        id.thresholds.insert(Perspective::Node, thresholds_for(nodes, rules)?);
        id.node_scores = by_key;
    }
    id.candidates.sort_by(|a, b| (a.perspective, &a.entity).cmp(&(b.perspective, &b.entity)));
    Ok(id)
}

/// Cross-perspective, time-series and offering analysis.
pub fn correct_stage(
    records: &[AccessLogRecord],
    features: &FeatureSet,
    identification: &Identification,
    rules: &RuleSet,
    offerings: &OfferingSet,
    cfg: &PipelineConfig,
    ingest: Option<IngestStats>,
) -> Result<Corrected> {
    let window = features.window;
    let cc = &cfg.correction;
    let graph = build_link_graph(records, &window, &identification.candidates);
    let node_table = features.normalized(Perspective::Node);
    let node_cuts = identification.thresholds.get(&Perspective::Node).cloned().unwrap_or_default();
    let node_evidence = node_evidence_map(node_table, &node_cuts);
    let cands = cross_perspective_validate(identification.candidates.clone(), &graph, &node_evidence, cc);
    let popularity = popularity_map(features.raw(Perspective::Content));
    let events = time_series_events(records, &window, &popularity, cc)?;
    let cands = temporal_corroborate(cands, &events);
    let obs = observe_offerings(records, &window, offerings, &cands);
    let cands = offering_validate(cands, offerings, features.raw(Perspective::Offering), &obs, cc);
    let audit = AuditTrail {
        seed: cfg.seed(),
        rules: rules.clone(),
        thresholds: identification.thresholds.clone(),
        normalization: Perspective::ALL.iter().map(|&p| (p, features.params(p).clone())).collect(),
        bo_traces: identification.bo_traces.clone(),
        model: identification.model.clone(),
        correction: cc.clone(),
        ingest,
    };
    Ok(Corrected {
        window,
        candidates: cands,
        events,
        audit,
    })
}

pub fn report_stage(corrected: Corrected) -> ForensicReport {
    summarize(corrected.candidates, corrected.events, corrected.window, corrected.audit)
}

/// Everything one in-memory run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stats: IngestStats,
    pub features: FeatureSet,
    pub identification: Identification,
    pub report: ForensicReport,
}

/// Run every phase on already-ingested records.
pub fn run_records(records: &[AccessLogRecord], stats: IngestStats, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let rules = cfg.load_rules()?;
    let offerings = cfg.load_offerings()?;
    let features = featurize_stage(records, cfg)?;
    let identification = identify_stage(&features, &rules, cfg)?;
    let corrected = correct_stage(records, &features, &identification, &rules, &offerings, cfg, Some(stats.clone()))?;
    let report = report_stage(corrected);
    Ok(RunOutput {
        stats,
        features,
        identification,
        report,
    })
}

/// Ingest the configured inputs and run every phase.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    // fail on bad rule or offering files before the expensive part
    cfg.load_rules()?;
    cfg.load_offerings()?;
    let (records, stats) = ingest_stage(cfg)?;
    run_records(&records, stats, cfg)
}

/// Stage the report files in the requested formats.
pub fn write_report(report: &ForensicReport, formats: &[OutputFormat], out: &mut Artifacts) -> Result<()> {
    for f in formats {
        match f {
            OutputFormat::Json => out.write(REPORT_FILE, report.to_json() + "\n")?,
            OutputFormat::Text => out.write(SUMMARY_FILE, report.render_text())?,
            OutputFormat::Csv => out.write(CONFIRMED_FILE, report.confirmed_csv())?,
        }
    }
    Ok(())
}
