use std::cmp::Ordering;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::density::{log_sum_exp, Prepared};
use super::{
    ClusterAssignment, GaussianComponent, GmmError, GmmParams, DEFAULT_MAX_ITER, DEFAULT_TOL,
    MODEL_VERSION, REG_EPS,
};

fn row_hash(seed: u64, row: &[f64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for v in row {
        h.update(v.to_bits().to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Row order determined by content and seed only, so input order cannot
/// influence the fit.
fn canonical_order(data: &[Vec<f64>], seed: u64) -> Vec<usize> {
    let hashes: Vec<u64> = data.par_iter().map(|r| row_hash(seed, r)).collect();
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| hashes[a].cmp(&hashes[b]).then_with(|| cmp_rows(&data[a], &data[b])));
    idx
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted mean and covariance (plus `REG_EPS` on the diagonal), summed in row order.
fn weighted_moments(x: &[&[f64]], weight: impl Fn(usize) -> f64, d: usize) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let mut n = 0.0;
    let mut mean = vec![0.0; d];
    for (i, row) in x.iter().enumerate() {
        let w = weight(i);
        n += w;
        for j in 0..d {
            mean[j] += w * row[j];
        }
    }
    if n > 0.0 {
        mean.iter_mut().for_each(|m| *m /= n);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (i, row) in x.iter().enumerate() {
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in 0..=a {
                cov[a][b] += w * da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = if n > 0.0 { cov[a][b] / n } else { 0.0 };
            cov[a][b] = v;
            cov[b][a] = v;
        }
        cov[a][a] += REG_EPS;
    }
    (n, mean, cov)
}

/// Farthest-point seeding starting from the first canonical row.
fn seed_centers(x: &[&[f64]], k: usize) -> Vec<usize> {
    let mut centers = vec![0usize];
    let mut min_d: Vec<f64> = x.iter().map(|r| sq_dist(r, x[0])).collect();
    while centers.len() < k {
        let mut best = 0;
        for (i, &v) in min_d.iter().enumerate() {
            if v > min_d[best] {
                best = i;
            }
        }
        centers.push(best);
        let c = x[best];
        min_d
            .par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(m, r)| *m = m.min(sq_dist(r, c)));
    }
    centers
}

struct EStep {
    /// Row-major N×K posteriors.
    resp: Vec<f64>,
    row_ll: Vec<f64>,
    ll: f64,
}

fn e_step(x: &[&[f64]], params: &GmmParams) -> Result<EStep, GmmError> {
    let prep = Prepared::new(params)?;
    let k = params.k;
    let rows: Vec<(Vec<f64>, f64)> = x
        .par_iter()
        .map_init(
            || Vec::with_capacity(k),
            |buf, row| {
                prep.weighted_terms(row, buf);
                let l = log_sum_exp(buf);
                (buf.iter().map(|t| (t - l).exp()).collect(), l)
            },
        )
        .collect();
    let mut resp = Vec::with_capacity(x.len() * k);
    let mut row_ll = Vec::with_capacity(x.len());
    let mut ll = 0.0;
    for (r, l) in rows {
        resp.extend(r);
        row_ll.push(l);
        ll += l;
    }
    Ok(EStep { resp, row_ll, ll })
}

/// Returns new weights and components, plus indices of collapsed components.
fn m_step(x: &[&[f64]], e: &EStep, k: usize, d: usize) -> (Vec<f64>, Vec<GaussianComponent>, Vec<usize>) {
    let stats: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> = (0..k)
        .into_par_iter()
        .map(|c| weighted_moments(x, |i| e.resp[i * k + c], d))
        .collect();
    let collapsed = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| !(s.0 >= REG_EPS))
        .map(|(c, _)| c)
        .collect();
    let n: f64 = stats.iter().map(|s| s.0).sum();
    let weights = stats.iter().map(|s| s.0 / n).collect();
    let comps = stats
        .into_iter()
        .map(|(_, mean, covariance)| GaussianComponent { mean, covariance })
        .collect();
    (weights, comps, collapsed)
}

fn validate(data: &[Vec<f64>], k: usize) -> Result<usize, GmmError> {
    if k == 0 || data.len() < k {
        return Err(GmmError::TooFewRows { rows: data.len(), k });
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(GmmError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

/// Fit a `k`-component full-covariance mixture by EM.
///
/// Stops once the relative log-likelihood gain drops below `tol` or after
/// `max_iter` M-steps. A step that lowers the likelihood (possible only
/// through regularization or a reseed) is rolled back and ends training.
pub fn fit_em(
    data: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmParams, GmmError> {
    let d = validate(data, k)?;
    let order = canonical_order(data, seed);
    let x: Vec<&[f64]> = order.iter().map(|&i| data[i].as_slice()).collect();

    let (_, _, global_cov) = weighted_moments(&x, |_| 1.0, d);
    let components = seed_centers(&x, k)
        .into_iter()
        .map(|c| GaussianComponent {
            mean: x[c].to_vec(),
            covariance: global_cov.clone(),
        })
        .collect();
    let mut params = GmmParams {
        version: MODEL_VERSION,
        k,
        dim: d,
        seed,
        weights: vec![1.0 / k as f64; k],
        components,
        train_log_likelihoods: Vec::new(),
        converged: false,
        reseeds: 0,
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut previous: Option<GmmParams> = None;
    for it in 0..=max_iter {
        let e = e_step(&x, &params)?;
        if let Some(&last) = trace.last() {
            if !(e.ll >= last) {
                params = previous.take().expect("previous params exist after first step");
                params.converged = true;
                break;
            }
        } else if !e.ll.is_finite() {
            return Err(GmmError::SingularCovariance);
        }
        let gain = trace.last().map(|&last| e.ll - last);
        trace.push(e.ll);
        if let Some(g) = gain {
            if g <= tol * trace[trace.len() - 2].abs() {
                params.converged = true;
                break;
            }
        }
        if it == max_iter {
            break;
        }

        let (mut weights, mut comps, collapsed) = m_step(&x, &e, k, d);
        let mut reseeds = params.reseeds;
        if !collapsed.is_empty() {
            if reseeds > 0 || collapsed.len() > 1 {
                return Err(GmmError::DegenerateComponent {
                    component: collapsed[usize::from(collapsed.len() > 1)],
                });
            }
            // restart the component at the worst-explained row
            let c = collapsed[0];
            let worst = (0..x.len())
                .min_by(|&a, &b| e.row_ll[a].total_cmp(&e.row_ll[b]))
                .unwrap();
            comps[c] = GaussianComponent {
                mean: x[worst].to_vec(),
                covariance: global_cov.clone(),
            };
            weights[c] = 1.0 / x.len() as f64;
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            reseeds += 1;
        }
        let next = GmmParams {
            weights,
            components: comps,
            reseeds,
            ..params.clone()
        };
        previous = Some(std::mem::replace(&mut params, next));
    }
    params.train_log_likelihoods = trace;
    Ok(params)
}

pub fn fit_em_default(data: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmParams, GmmError> {
    fit_em(data, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)
}

/// Posterior responsibilities, hard cluster and confidence per row.
pub fn assign(data: &[Vec<f64>], params: &GmmParams) -> Result<ClusterAssignment, GmmError> {
    if let Some(bad) = data.iter().find(|r| r.len() != params.dim) {
        return Err(GmmError::DimensionMismatch {
            expected: params.dim,
            found: bad.len(),
        });
    }
    let prep = Prepared::new(params)?;
    let rows: Vec<(usize, Vec<f64>, f64)> = data
        .par_iter()
        .map(|row| {
            let mut terms = Vec::with_capacity(params.k);
            prep.weighted_terms(row, &mut terms);
            let l = log_sum_exp(&terms);
            let resp: Vec<f64> = terms.iter().map(|t| (t - l).exp()).collect();
            let mut best = 0;
            for (i, &r) in resp.iter().enumerate() {
                if r > resp[best] {
                    best = i;
                }
            }
            let conf = resp[best];
            (best, resp, conf)
        })
        .collect();
    let mut out = ClusterAssignment {
        clusters: Vec::with_capacity(rows.len()),
        responsibilities: Vec::with_capacity(rows.len()),
        confidences: Vec::with_capacity(rows.len()),
    };
    for (c, r, conf) in rows {
        out.clusters.push(c);
        out.responsibilities.push(r);
        out.confidences.push(conf);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.05).unwrap();
        let mut out = Vec::new();
        for c in [0.0, 1.0] {
            for _ in 0..100 {
                out.push(vec![c + n.sample(&mut rng), c + n.sample(&mut rng)]);
            }
        }
        out
    }

    #[test]
    fn recovers_two_blobs() {
        let data = blobs(1);
        let p = fit_em_default(&data, 2, 42).unwrap();
        let mut means: Vec<&Vec<f64>> = p.components.iter().map(|c| &c.mean).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (m, c) in means.iter().zip([0.0, 1.0]) {
            assert!((m[0] - c).abs() < 0.05 && (m[1] - c).abs() < 0.05, "{m:?}");
        }
        let a = assign(&[vec![0.0, 0.0], vec![1.0, 1.0]], &p).unwrap();
        assert!(a.confidences.iter().all(|&c| c > 0.99));
        assert_ne!(a.clusters[0], a.clusters[1]);
    }

    #[test]
    fn single_component_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() * 3.0]).collect();
        let p = fit_em_default(&data, 1, 0).unwrap();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        for a in 0..2 {
            assert!((p.components[0].mean[a] - mean[a]).abs() < 1e-12);
            for b in 0..2 {
                let s: f64 = data.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
                let want = s + if a == b { REG_EPS } else { 0.0 };
                assert!((p.components[0].covariance[a][b] - want).abs() < 1e-12);
            }
        }
        let a = assign(&data, &p).unwrap();
        assert!(a.confidences.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let data = blobs(9);
        let a = fit_em_default(&data, 3, 5).unwrap();
        let b = fit_em_default(&data, 3, 5).unwrap();
        assert_eq!(a, b);
        let mut rev = data.clone();
        rev.reverse();
        let c = fit_em_default(&rev, 3, 5).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_too_many_components() {
        let data = vec![vec![0.0], vec![1.0]];
        assert_eq!(fit_em_default(&data, 3, 0), Err(GmmError::TooFewRows { rows: 2, k: 3 }));
    }

    #[test]
    fn symmetric_point_splits_evenly() {
        let comp = |m: f64| GaussianComponent {
            mean: vec![m],
            covariance: vec![vec![1.0]],
        };
        let p = GmmParams::from_components(vec![0.5, 0.5], vec![comp(-1.0), comp(1.0)]);
        let a = assign(&[vec![0.0]], &p).unwrap();
        assert!((a.responsibilities[0][0] - 0.5).abs() < 1e-12);
        assert!((a.responsibilities[0][1] - 0.5).abs() < 1e-12);
    }
}
