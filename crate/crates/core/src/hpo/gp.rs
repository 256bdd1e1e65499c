use crate::tabular::ridge::{cholesky, cholesky_solve};

pub const NOISE: f64 = 1e-6;
pub const LENGTH_SCALES: [f64; 5] = [0.1, 0.2, 0.5, 1.0, 2.0];

/// Matérn 5/2 with unit variance.
pub fn matern52(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let r = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / length_scale;
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Gaussian-process regressor on standardized targets.
#[derive(Debug, Clone)]
pub struct Gp {
    pub length_scale: f64,
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

fn standardize(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Gp {
    /// Fits with a fixed length scale; `None` if the kernel matrix is not positive definite.
    pub fn fit_with(x: &[Vec<f64>], y: &[f64], length_scale: f64) -> Option<(Gp, f64)> {
        let n = y.len();
        if n == 0 {
            return None;
        }
        let (y_mean, y_std) = standardize(y);
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = matern52(&x[i], &x[j], length_scale);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += NOISE;
        }
        cholesky(&mut k, n).ok()?;
        let mut alpha = ys.clone();
        cholesky_solve(&k, n, &mut alpha);
        let log_det: f64 = (0..n).map(|i| k[i * n + i].ln()).sum();
        let fit: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((
            Gp {
                length_scale,
                x: x.to_vec(),
                chol: k,
                alpha,
                y_mean,
                y_std,
            },
            lml,
        ))
    }

    /// Picks the length scale from [`LENGTH_SCALES`] with the highest marginal likelihood
    /// (first on ties).
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Option<Gp> {
        let mut best: Option<(Gp, f64)> = None;
        for &l in &LENGTH_SCALES {
            if let Some((gp, lml)) = Gp::fit_with(x, y, l) {
                if best.as_ref().is_none_or(|b| lml > b.1) {
                    best = Some((gp, lml));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let mut v: Vec<f64> = self.x.iter().map(|xi| matern52(xi, q, self.length_scale)).collect();
        let mean: f64 = v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.chol[i * n + k] * v[k];
            }
            v[i] = s / self.chol[i * n + i];
        }
        let var = (1.0 - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

/// Expected improvement below `best` for minimization.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let d = best - mean;
    if sd < 1e-12 {
        return d.max(0.0);
    }
    let z = d / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    d * cdf + sd * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0, (i * 3 % 8) as f64 / 7.0]).collect();
        let y = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1] * 4.0).collect();
        (x, y)
    }

    #[test]
    fn posterior_interpolates_observations() {
        let (x, y) = data();
        let gp = Gp::fit(&x, &y).unwrap();
        for (p, t) in x.iter().zip(&y) {
            let (m, sd) = gp.predict(p);
            assert!((m - t).abs() < 1e-4, "{m} vs {t}");
            assert!(sd < 1e-2);
        }
    }

    #[test]
    fn uncertainty_grows_away_from_data() {
        let (x, y) = data();
        let gp = Gp::fit_with(&x, &y, 0.2).unwrap().0;
        assert!(gp.predict(&[3.0, 3.0]).1 > gp.predict(&[0.5, 0.5]).1);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(matern52(&[0.3], &[0.3], 1.0), 1.0);
        let s = 5f64.sqrt();
        let want = (1.0 + s + 5.0 / 3.0) * (-s).exp();
        assert!((matern52(&[0.0], &[1.0], 1.0) - want).abs() < 1e-15);
    }

    #[test]
    fn ei_limits() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0), 1.0);
        assert_eq!(expected_improvement(3.0, 0.0, 2.0), 0.0);
        let at_best = expected_improvement(2.0, 1.0, 2.0);
        assert!((at_best - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!(expected_improvement(1.0, 1.0, 2.0) > at_best);
    }
}
