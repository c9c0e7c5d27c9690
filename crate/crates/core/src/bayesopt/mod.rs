//! One-dimensional Bayesian optimization (GP surrogate, expected improvement)
//! and the unsupervised objectives it tunes.

mod gp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gmm::{fit_em_default, GmmParams};
use crate::iforest::flag_count;
use gp::GaussianProcess;

pub const GRID_POINTS: usize = 512;
pub const OBSERVATION_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpaceKind {
    IntegerRange,
    RealRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kind: SpaceKind,
    pub lo: f64,
    pub hi: f64,
}

impl SearchSpace {
    pub fn integer(lo: i64, hi: i64) -> Self {
        assert!(lo < hi, "empty integer range [{lo}, {hi}]");
        SearchSpace {
            kind: SpaceKind::IntegerRange,
            lo: lo as f64,
            hi: hi as f64,
        }
    }

    pub fn real(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "empty real range [{lo}, {hi}]");
        SearchSpace {
            kind: SpaceKind::RealRange,
            lo,
            hi,
        }
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    /// Snap a raw candidate onto the space.
    pub fn snap(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        match self.kind {
            SpaceKind::IntegerRange => x.round(),
            SpaceKind::RealRange => x,
        }
    }

    fn initial_points(&self) -> [f64; 3] {
        [self.lo, self.hi, self.snap((self.lo + self.hi) / 2.0)]
    }

    fn cardinality(&self) -> Option<usize> {
        match self.kind {
            SpaceKind::IntegerRange => Some((self.hi - self.lo) as usize + 1),
            SpaceKind::RealRange => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub param: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub space: SearchSpace,
    pub budget: usize,
    pub seed: u64,
    pub evaluations: Vec<Evaluation>,
    pub best: Option<Evaluation>,
}

impl BoTrace {
    pub fn best_param(&self) -> Option<f64> {
        self.best.map(|b| b.param)
    }
}

fn argmin(evals: &[Evaluation]) -> Option<Evaluation> {
    evals.iter().copied().fold(None, |best, e| match best {
        Some(b) if !(e.value < b.value) => Some(b),
        _ if e.value.is_nan() && best.is_some() => best,
        _ => Some(e),
    })
}

fn already_seen(evals: &[Evaluation], x: f64) -> bool {
    evals.iter().any(|e| (e.param - x).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Minimize `objective` over `space` with at most `budget` evaluations.
///
/// The first three points are the bounds and the midpoint. After that each
/// proposal maximizes expected improvement over a 512-point grid whose
/// offset (and tie-breaking) comes from a stream keyed by `(seed, step)`,
/// so a longer budget replays a shorter one as a prefix.
pub fn optimize(mut objective: impl FnMut(f64) -> f64, space: SearchSpace, budget: usize, seed: u64) -> BoTrace {
    let mut evals: Vec<Evaluation> = Vec::new();
    let exhausted = |evals: &Vec<Evaluation>| space.cardinality().is_some_and(|n| evals.len() >= n);
    for x in space.initial_points() {
        if evals.len() >= budget {
            break;
        }
        if !already_seen(&evals, x) {
            evals.push(Evaluation {
                param: x,
                value: objective(x),
            });
        }
    }
    let mut step = 0u64;
    while evals.len() < budget && !exhausted(&evals) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        step += 1;
        let Some(x) = propose(&evals, &space, &mut rng) else {
            break;
        };
        evals.push(Evaluation {
            param: x,
            value: objective(x),
        });
    }
    BoTrace {
        space,
        budget,
        seed,
        best: argmin(&evals),
        evaluations: evals,
    }
}

/// Surrogate targets: infinite or NaN objectives are replaced by a value
/// just past the worst finite one, then everything is standardized.
fn surrogate_targets(evals: &[Evaluation]) -> Vec<f64> {
    let finite: Vec<f64> = evals.iter().map(|e| e.value).filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![0.0; evals.len()];
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ceiling = hi + (hi - lo) + 1.0;
    let y: Vec<f64> = evals
        .iter()
        .map(|e| if e.value.is_finite() { e.value } else { ceiling })
        .collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    y.iter().map(|v| (v - mean) / sd).collect()
}

fn propose(evals: &[Evaluation], space: &SearchSpace, rng: &mut ChaCha8Rng) -> Option<f64> {
    let xs: Vec<f64> = evals.iter().map(|e| e.param).collect();
    let ys = surrogate_targets(evals);
    let gp = GaussianProcess::fit(&xs, &ys, space.span() / 4.0, OBSERVATION_NOISE);
    let best_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let offset: f64 = rng.random();
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..GRID_POINTS {
        let raw = space.lo + space.span() * (i as f64 + offset) / GRID_POINTS as f64;
        let x = space.snap(raw);
        if already_seen(evals, x) {
            continue;
        }
        let ei = gp.expected_improvement(x, best_y);
        let tie: f64 = rng.random();
        let better = match best {
            None => true,
            Some((_, bei, btie)) => ei > bei || (ei == bei && tie < btie),
        };
        if better {
            best = Some((x, ei, tie));
        }
    }
    if best.is_none() {
        // the jittered grid can miss isolated unvisited integers
        if let Some(n) = space.cardinality() {
            return (0..n)
                .map(|i| space.lo + i as f64)
                .find(|&x| !already_seen(evals, x));
        }
    }
    best.map(|b| b.0)
}

/// Bayesian information criterion of a fitted mixture on `n` rows.
pub fn bic(params: &GmmParams, n: usize) -> f64 {
    match params.final_log_likelihood() {
        Some(ll) => -2.0 * ll + params.n_free_params() as f64 * (n as f64).ln(),
        None => f64::INFINITY,
    }
}

/// BIC of an EM fit with `k` components; `+∞` when the fit is infeasible.
pub fn gmm_selection_objective(data: &[Vec<f64>], k: usize, seed: u64) -> f64 {
    if k == 0 || k > data.len() {
        return f64::INFINITY;
    }
    match fit_em_default(data, k, seed) {
        Ok(p) => bic(&p, data.len()),
        Err(_) => f64::INFINITY,
    }
}

/// Negative gap between the lowest flagged and highest unflagged score.
pub fn iforest_contamination_objective(scores: &[f64], contamination: f64) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let k = flag_count(contamination, s.len());
    if k == 0 || k >= s.len() {
        return 0.0;
    }
    -(s[k - 1] - s[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_budget_is_space_filling() {
        let t = optimize(|k| (k - 7.0).powi(2), SearchSpace::integer(2, 20), 3, 1);
        let xs: Vec<f64> = t.evaluations.iter().map(|e| e.param).collect();
        assert_eq!(xs, vec![2.0, 20.0, 11.0]);
        assert_eq!(t.best_param(), Some(11.0));
    }

    #[test]
    fn finds_quadratic_minimum() {
        let t = optimize(|k| (k - 7.0).powi(2), SearchSpace::integer(2, 20), 10, 3);
        assert_eq!(t.best_param(), Some(7.0));
        assert!(t.evaluations.len() <= 10);
    }

    #[test]
    fn constant_objective_never_repeats() {
        let t = optimize(|_| 1.0, SearchSpace::integer(0, 5), 20, 0);
        let mut xs: Vec<i64> = t.evaluations.iter().map(|e| e.param as i64).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), t.evaluations.len());
        assert_eq!(xs.len(), 6);
    }

    #[test]
    fn infinite_values_do_not_poison_surrogate() {
        let t = optimize(
            |k| if k > 10.0 { f64::INFINITY } else { (k - 4.0).abs() },
            SearchSpace::integer(2, 20),
            8,
            5,
        );
        assert_eq!(t.best_param(), Some(4.0));
    }

    #[test]
    fn contamination_gap() {
        assert!((iforest_contamination_objective(&[0.9, 0.85, 0.3, 0.2], 0.5) + 0.55).abs() < 1e-12);
        assert_eq!(iforest_contamination_objective(&[0.4; 5], 0.2), 0.0);
        assert!((iforest_contamination_objective(&[0.9, 0.1, 0.1], 0.1) + 0.8).abs() < 1e-12);
    }
}
