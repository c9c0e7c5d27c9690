//! Isolation forest scoring.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
pub const DEFAULT_CONTAMINATION: f64 = 0.1;
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForestError {
    #[error("every feature is constant; nothing to isolate")]
    DegenerateData,
    #[error("isolation forest needs at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },
    #[error("forest needs at least one tree")]
    NoTrees,
    #[error("contamination {0} outside (0, 0.5]")]
    InvalidContamination(f64),
    #[error("expected {expected}-dimensional input, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Average unsuccessful-search path length in a binary search tree of `n` items.
pub fn avg_path_normalizer(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            let harmonic: f64 = if n < 4096 {
                (1..n).map(|i| 1.0 / i as f64).sum()
            } else {
                m.ln() + 0.577_215_664_901_532_9 + 0.5 / m - 1.0 / (12.0 * m * m)
            };
            2.0 * harmonic - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < value` go left.
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl IsolationTree {
    /// Depth at which `x` terminates plus the credit for the leaf's size.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    i = if x[feature] < value { left } else { right };
                    depth += 1;
                }
                TreeNode::Leaf { size } => return depth as f64 + avg_path_normalizer(size),
            }
        }
    }

    pub fn leaf_total(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { size } => *size,
                TreeNode::Split { .. } => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub version: u32,
    pub dim: usize,
    pub n_trees: usize,
    /// Subsample actually used, after clamping to the row count.
    pub subsample_size: usize,
    pub requested_subsample: usize,
    pub contamination: f64,
    pub seed: u64,
    pub trees: Vec<IsolationTree>,
}

struct Builder<'a> {
    data: &'a [Vec<f64>],
    dim: usize,
    height_limit: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= self.height_limit {
            return id;
        }
        let mut spans = Vec::new();
        for f in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in &rows {
                lo = lo.min(self.data[r][f]);
                hi = hi.max(self.data[r][f]);
            }
            if hi > lo {
                spans.push((f, lo, hi));
            }
        }
        if spans.is_empty() {
            return id;
        }
        let (feature, lo, hi) = spans[self.rng.random_range(0..spans.len())];
        let mut value = self.rng.random_range(lo..hi);
        if value <= lo {
            // adjacent floats leave no interior point; hi still splits
            value = hi;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.data[i][feature] < value);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }
}

/// Build `n_trees` isolation trees, each on its own subsample.
///
/// Tree `t` draws from a ChaCha stream keyed by `(seed, t)`, so the result
/// does not depend on how trees are scheduled across threads.
pub fn fit_forest(
    data: &[Vec<f64>],
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<IsolationForest, ForestError> {
    if data.len() < 2 {
        return Err(ForestError::TooFewRows { rows: data.len() });
    }
    if n_trees == 0 {
        return Err(ForestError::NoTrees);
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != dim) {
        return Err(ForestError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let varies = (0..dim).any(|f| data.iter().any(|r| r[f] != data[0][f]));
    if !varies {
        return Err(ForestError::DegenerateData);
    }
    let psi = subsample.clamp(2, data.len());
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let rows = sample(&mut rng, data.len(), psi).into_vec();
            let mut b = Builder {
                data,
                dim,
                height_limit,
                rng,
                nodes: Vec::new(),
            };
            b.grow(rows, 0);
            IsolationTree { nodes: b.nodes }
        })
        .collect();
    Ok(IsolationForest {
        version: MODEL_VERSION,
        dim,
        n_trees,
        subsample_size: psi,
        requested_subsample: subsample,
        contamination: DEFAULT_CONTAMINATION,
        seed,
        trees,
    })
}

/// `2^(-mean_path / c(psi))`.
pub fn score_from_path(mean_path: f64, psi: usize) -> f64 {
    let c = avg_path_normalizer(psi);
    if c == 0.0 {
        return 1.0;
    }
    2f64.powf(-mean_path / c)
}

impl IsolationForest {
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        total / self.trees.len() as f64
    }

    pub fn with_contamination(mut self, contamination: f64) -> Result<Self, ForestError> {
        check_contamination(contamination)?;
        self.contamination = contamination;
        Ok(self)
    }
}

/// Anomaly score in `(0, 1]`; higher is more isolated.
pub fn anomaly_score(forest: &IsolationForest, x: &[f64]) -> Result<f64, ForestError> {
    if x.len() != forest.dim {
        return Err(ForestError::DimensionMismatch {
            expected: forest.dim,
            found: x.len(),
        });
    }
    Ok(score_from_path(forest.mean_path_length(x), forest.subsample_size))
}

pub fn score_all(forest: &IsolationForest, data: &[Vec<f64>]) -> Result<Vec<f64>, ForestError> {
    data.par_iter().map(|x| anomaly_score(forest, x)).collect()
}

fn check_contamination(c: f64) -> Result<(), ForestError> {
    if c > 0.0 && c <= 0.5 {
        Ok(())
    } else {
        Err(ForestError::InvalidContamination(c))
    }
}

/// Number of entities flagged at contamination `c` among `n`.
pub fn flag_count(c: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // the epsilon absorbs products like 0.1 * 30 = 3.0000000000000004
    let k = (c * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

/// Entities sorted by descending score, ties by ascending ID.
pub fn rank_by_score(scores: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    let mut v: Vec<(&str, f64)> = scores.iter().map(|(k, s)| (k.as_str(), *s)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

/// The `⌈c·N⌉` highest-scoring entities.
pub fn flag_by_contamination(
    scores: &BTreeMap<String, f64>,
    contamination: f64,
) -> Result<BTreeSet<String>, ForestError> {
    check_contamination(contamination)?;
    let k = flag_count(contamination, scores.len());
    Ok(rank_by_score(scores)
        .into_iter()
        .take(k)
        .map(|(id, _)| id.to_string())
        .collect())
}
