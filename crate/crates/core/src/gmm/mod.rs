//! Gaussian mixture clustering with full covariances, fitted by EM.

mod density;
mod em;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use density::{gaussian_log_density, mixture_log_density};
pub use em::{assign, fit_em, fit_em_default};

/// Diagonal regularization added to every covariance.
pub const REG_EPS: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmmError {
    #[error("covariance is not positive definite even after regularization")]
    SingularCovariance,
    #[error("mixture component {component} collapsed twice")]
    DegenerateComponent { component: usize },
    #[error("expected {expected}-dimensional input, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot fit {k} components to {rows} rows")]
    TooFewRows { rows: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Dense symmetric D×D matrix, row-major.
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianComponent {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fitted mixture state, serializable for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub version: u32,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub components: Vec<GaussianComponent>,
    /// Data log-likelihood before each M-step, then of the final parameters.
    pub train_log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub reseeds: usize,
}

impl GmmParams {
    /// Build from explicit weights and components (no training trace).
    pub fn from_components(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Self {
        GmmParams {
            version: MODEL_VERSION,
            k: components.len(),
            dim: components.first().map_or(0, |c| c.dim()),
            seed: 0,
            weights,
            components,
            train_log_likelihoods: Vec::new(),
            converged: false,
            reseeds: 0,
        }
    }

    pub fn final_log_likelihood(&self) -> Option<f64> {
        self.train_log_likelihoods.last().copied()
    }

    /// Free parameters of a full-covariance mixture.
    pub fn n_free_params(&self) -> usize {
        let (k, d) = (self.k, self.dim);
        k - 1 + k * d + k * d * (d + 1) / 2
    }
}

/// Per-row posterior over components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
    pub confidences: Vec<f64>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Row indices assigned to cluster `k`.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.clusters[i] == k).collect()
    }
}
