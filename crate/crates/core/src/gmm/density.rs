use nalgebra::DMatrix;

use super::{GaussianComponent, GmmError, GmmParams, REG_EPS};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor of a component covariance, kept as a dense row-major
/// lower triangle for fast repeated solves.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl Factor {
    /// Factor `cov`, retrying once with `REG_EPS` on the diagonal.
    pub(crate) fn new(cov: &[Vec<f64>]) -> Result<Self, GmmError> {
        let d = cov.len();
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let chol = m.clone().cholesky().or_else(|| {
            let mut r = m;
            for i in 0..d {
                r[(i, i)] += REG_EPS;
            }
            r.cholesky()
        });
        let l = chol.ok_or(GmmError::SingularCovariance)?.unpack();
        let mut lower = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                lower[i * d + j] = l[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        if !log_det.is_finite() {
            return Err(GmmError::SingularCovariance);
        }
        Ok(Factor { dim: d, lower, log_det })
    }

    /// Log of the multivariate normal density at `x` around `mean`.
    pub(crate) fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = self.dim;
        let mut z = [0.0f64; 32];
        let mut heap;
        let z: &mut [f64] = if d <= 32 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut maha = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let mut s = x[i] - mean[i];
            for (l, zj) in row.iter().zip(z.iter()) {
                s -= l * zj;
            }
            let zi = s / self.lower[i * d + i];
            z[i] = zi;
            maha += zi * zi;
        }
        -0.5 * (d as f64 * LN_2PI + self.log_det + maha)
    }
}

/// Components factored once for bulk evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<'a> {
    pub(crate) params: &'a GmmParams,
    factors: Vec<Factor>,
    log_weights: Vec<f64>,
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(params: &'a GmmParams) -> Result<Self, GmmError> {
        let factors = params
            .components
            .iter()
            .map(|c| Factor::new(&c.covariance))
            .collect::<Result<Vec<_>, _>>()?;
        let log_weights = params.weights.iter().map(|w| w.ln()).collect();
        Ok(Prepared {
            params,
            factors,
            log_weights,
        })
    }

    /// `log π_k + log G_k(x)` for every component.
    pub(crate) fn weighted_terms(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for ((f, c), lw) in self.factors.iter().zip(&self.params.components).zip(&self.log_weights) {
            out.push(lw + f.log_density(x, &c.mean));
        }
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn check_dim(x: &[f64], d: usize) -> Result<(), GmmError> {
    if x.len() != d {
        return Err(GmmError::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}

/// Log of the multivariate normal density of `comp` at `x`.
pub fn gaussian_log_density(x: &[f64], comp: &GaussianComponent) -> Result<f64, GmmError> {
    check_dim(x, comp.mean.len())?;
    Ok(Factor::new(&comp.covariance)?.log_density(x, &comp.mean))
}

/// Log of the mixture density, combined with log-sum-exp.
pub fn mixture_log_density(x: &[f64], params: &GmmParams) -> Result<f64, GmmError> {
    check_dim(x, params.dim)?;
    let prepared = Prepared::new(params)?;
    let mut terms = Vec::with_capacity(params.k);
    prepared.weighted_terms(x, &mut terms);
    Ok(log_sum_exp(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> GaussianComponent {
        GaussianComponent { mean, covariance: cov }
    }

    #[test]
    fn standard_normal_at_mean() {
        let c = comp(vec![0.0], vec![vec![1.0]]);
        let v = gaussian_log_density(&[0.0], &c).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn scaled_variance() {
        let c = comp(vec![0.0], vec![vec![4.0]]);
        let v = gaussian_log_density(&[1.0], &c).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - 0.125;
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn correlated_2d_matches_explicit_inverse() {
        let cov = vec![vec![2.0, 0.6], vec![0.6, 1.0]];
        let c = comp(vec![0.5, -1.0], cov.clone());
        let x = [1.5, 0.2];
        let det: f64 = 2.0 * 1.0 - 0.36;
        let inv = [[1.0 / det, -0.6 / det], [-0.6 / det, 2.0 / det]];
        let d = [1.0, 1.2];
        let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let want = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q;
        assert!((gaussian_log_density(&x, &c).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nan_covariance_is_singular() {
        let c = comp(vec![0.0], vec![vec![f64::NAN]]);
        assert_eq!(gaussian_log_density(&[0.0], &c), Err(GmmError::SingularCovariance));
        let c = comp(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert_eq!(gaussian_log_density(&[0.0, 0.0], &c), Err(GmmError::SingularCovariance));
    }

    #[test]
    fn zero_variance_gets_regularized() {
        let c = comp(vec![0.0], vec![vec![0.0]]);
        let v = gaussian_log_density(&[0.0], &c).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI * REG_EPS).ln())).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_handles_empty_mass() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
