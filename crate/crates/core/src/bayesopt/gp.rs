use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Zero-mean GP on one input with a squared-exponential kernel.
pub(crate) struct GaussianProcess {
    xs: Vec<f64>,
    length: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

fn kernel(a: f64, b: f64, length: f64) -> f64 {
    let d = (a - b) / length;
    (-0.5 * d * d).exp()
}

impl GaussianProcess {
    pub(crate) fn fit(xs: &[f64], ys: &[f64], length: f64, noise: f64) -> Self {
        let n = xs.len();
        let mut jitter = noise;
        loop {
            let k = DMatrix::from_fn(n, n, |i, j| kernel(xs[i], xs[j], length) + if i == j { jitter } else { 0.0 });
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&DVector::from_column_slice(ys));
                return GaussianProcess {
                    xs: xs.to_vec(),
                    length,
                    chol,
                    alpha,
                };
            }
            jitter *= 10.0;
        }
    }

    /// Posterior mean and standard deviation at `x`.
    pub(crate) fn predict(&self, x: f64) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|&xi| kernel(x, xi, self.length)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }

    /// Expected improvement below `best` (minimization).
    pub(crate) fn expected_improvement(&self, x: f64, best: f64) -> f64 {
        let (mu, sd) = self.predict(x);
        if sd <= 1e-12 {
            return (best - mu).max(0.0);
        }
        let z = (best - mu) / sd;
        let n = Normal::standard();
        (best - mu) * n.cdf(z) + sd * n.pdf(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_observations() {
        let gp = GaussianProcess::fit(&[0.0, 1.0, 2.0], &[1.0, -1.0, 0.5], 1.0, 1e-9);
        for (x, y) in [(0.0, 1.0), (1.0, -1.0), (2.0, 0.5)] {
            let (m, s) = gp.predict(x);
            assert!((m - y).abs() < 1e-6);
            assert!(s < 1e-3);
        }
        let (_, far) = gp.predict(50.0);
        assert!((far - 1.0).abs() < 1e-9);
    }

    #[test]
    fn improvement_is_non_negative() {
        let gp = GaussianProcess::fit(&[0.0, 4.0], &[0.0, 1.0], 1.0, 1e-6);
        for i in 0..40 {
            assert!(gp.expected_improvement(i as f64 * 0.1, 0.0) >= 0.0);
        }
    }
}
