//! Perspective feature tables: content, node, client IP and offering.

pub mod builders;
pub mod dynamicity;
pub mod table;
pub mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builders::{
    build_content_features, build_ip_features, build_node_features, build_offering_features,
    legitimate_ips, popularity_map, FeatureConfig, Popularity, CONTENT_FEATURES, IP_FEATURES,
    NODE_FEATURES, OFFERING_FEATURES,
};
pub use dynamicity::compute_dynamicity;
pub use table::{
    min_max_normalize, quantize, read_csv, write_csv, NormalizationParams, OfferingMix,
    Perspective, PerspectiveTable, SideData,
};
pub use window::{WindowSpec, DEFAULT_SUB_WINDOW_SECS};

use crate::ingest::AccessLogRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("no records fall inside the analysis window ({perspective} perspective); check --window-start/--window-hours")]
    EmptyWindow { perspective: Perspective },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

/// Raw and normalized tables for all four perspectives over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub window: WindowSpec,
    pub raw: Vec<PerspectiveTable>,
    pub normalized: Vec<PerspectiveTable>,
    pub params: Vec<NormalizationParams>,
}

impl FeatureSet {
    fn index(p: Perspective) -> usize {
        Perspective::ALL.iter().position(|q| *q == p).unwrap()
    }

    pub fn raw(&self, p: Perspective) -> &PerspectiveTable {
        &self.raw[Self::index(p)]
    }

    pub fn normalized(&self, p: Perspective) -> &PerspectiveTable {
        &self.normalized[Self::index(p)]
    }

    pub fn params(&self, p: Perspective) -> &NormalizationParams {
        &self.params[Self::index(p)]
    }
}

/// Build, normalize and quantize all four tables.
///
/// Normalized tables are rounded to CSV precision so that a run restarted
/// from the exported CSVs sees exactly the same numbers.
pub fn build_all(
    records: &[AccessLogRecord],
    window: &WindowSpec,
    config: &FeatureConfig,
) -> Result<FeatureSet, FeatureError> {
    window.validate()?;
    let content = build_content_features(records, window)?;
    let popularity = popularity_map(&content);
    let node = build_node_features(records, window, &popularity, config)?;
    let ip = build_ip_features(records, window, &popularity, config)?;
    let offering = build_offering_features(records, window, &popularity)?;
    let raw = vec![content, node, ip, offering];
    let mut normalized = Vec::with_capacity(4);
    let mut params = Vec::with_capacity(4);
    for t in &raw {
        let (n, p) = min_max_normalize(t);
        normalized.push(n.quantized());
        params.push(p);
    }
    Ok(FeatureSet {
        window: *window,
        raw,
        normalized,
        params,
    })
}
