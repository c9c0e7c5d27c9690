//! Multi-perspective forensic analytics for application-layer access logs.
//!
//! The crate turns raw access-log lines into four perspective-indexed
//! feature tables (content, node, client IP, offering), flags numerically
//! anomalous entities with a Gaussian mixture model and an isolation forest,
//! types them as DoS or cache-pollution suspects, and validates the
//! suspects across perspectives, over time and against offering
//! configuration before emitting a forensic report.
//!
//! Pipeline stages map onto modules:
//!
//! | stage          | module                                   |
//! |----------------|------------------------------------------|
//! | collection     | [`ingest`]                               |
//! | examination    | [`ingest::sanitize`], [`perspectives`]   |
//! | identification | [`gmm`], [`iforest`], [`bayesopt`], [`detect`] |
//! | analysis       | [`correct`]                              |
//! | presentation   | [`correct::report`], [`pipeline`]        |
//!
//! [`synth`] generates labelled workloads with injected attacks for
//! end-to-end verification.

pub mod bayesopt;
pub mod correct;
pub mod detect;
pub mod error;
pub mod gmm;
pub mod iforest;
pub mod ingest;
pub mod perspectives;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
