//! Analysis phase: corroborate or demote preliminary candidates using links
//! between perspectives, traffic time series and declared offering
//! configuration, then summarize the survivors.

pub mod cross;
pub mod graph;
pub mod offering;
pub mod report;
pub mod timeseries;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cross::{cross_perspective_validate, node_evidence_map};
pub use graph::{build_link_graph, LinkGraph};
pub use offering::{
    observe_offerings, offering_validate, ExpectedProfile, OfferingConfig, OfferingObservations, OfferingSet, Purpose,
};
pub use report::{summarize, AuditTrail, ForensicReport, REPORT_VERSION};
pub use timeseries::{
    flagged_runs, robust_z_scores, temporal_corroborate, time_series_events, EventKind, RobustScale, TimeSeriesEvent,
    MIN_SUB_WINDOWS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorrectError {
    #[error("time-series analysis needs at least {required} sub-windows, window has {found}; shorten --sub-window-secs")]
    TooFewSubWindows { found: usize, required: usize },
}

/// Corroboration constants. None of them comes with a canonical value, so
/// all are configurable and echoed in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    /// Requests needed for a link to count.
    pub min_link_weight: u64,
    /// Corroborated malicious IPs needed to promote a node.
    pub promotion_fan_in: usize,
    pub confirm_marks: usize,
    /// Robust z-score threshold for time-series events.
    pub mad_z: f64,
    /// Cap on entities implicated per perspective per event.
    pub max_implicated: usize,
    pub crowd_min_ips: usize,
    /// Share of the burst excess one content must carry to look like a crowd.
    pub crowd_content_share: f64,
    pub crowd_max_error_rate: f64,
    pub crowd_min_popularity: f64,
    /// Mismatching requests an offering needs before it escalates.
    pub mismatch_min_requests: u64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            min_link_weight: 10,
            promotion_fan_in: 3,
            confirm_marks: 2,
            mad_z: 3.5,
            max_implicated: 10_000,
            crowd_min_ips: 100,
            crowd_content_share: 0.5,
            crowd_max_error_rate: 0.05,
            crowd_min_popularity: 0.5,
            mismatch_min_requests: 10,
        }
    }
}
