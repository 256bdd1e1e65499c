use serde::{Deserialize, Serialize};

use crate::error::TabularError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// In-place Cholesky factorization of a symmetric positive definite matrix.
/// Fails when a pivot falls below `tol` times the largest diagonal entry.
pub fn cholesky(a: &mut [f64], n: usize) -> Result<(), TabularError> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > tol) {
            return Err(TabularError::SingularSystem);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` given the lower factor from [`cholesky`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

impl Ridge {
    /// `(XcᵀXc + λI) w = Xcᵀ yc` on centered data; the intercept is not penalized.
    pub fn fit(x: &[f64], y: &[f64], cols: usize, lambda: f64) -> Result<Self, TabularError> {
        let rows = y.len();
        let inv = 1.0 / rows as f64;
        let mut mean_x = vec![0.0; cols];
        for r in x.chunks(cols) {
            for (m, &v) in mean_x.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean_x.iter_mut().for_each(|m| *m *= inv);
        let mean_y = y.iter().sum::<f64>() * inv;
        let xc: Vec<f64> = x
            .chunks(cols)
            .flat_map(|r| r.iter().zip(&mean_x).map(|(v, m)| v - m))
            .collect();
        let mut gram = vec![0.0; cols * cols];
        f64::gemm(cols, rows, cols, &xc, 1, cols as isize, &xc, cols as isize, 1, 0.0, &mut gram, cols as isize, 1);
        for i in 0..cols {
            gram[i * cols + i] += lambda;
        }
        let mut rhs = vec![0.0; cols];
        for (r, &t) in xc.chunks(cols).zip(y) {
            let t = t - mean_y;
            for (acc, &v) in rhs.iter_mut().zip(r) {
                *acc += v * t;
            }
        }
        cholesky(&mut gram, cols)?;
        cholesky_solve(&gram, cols, &mut rhs);
        let intercept = mean_y - rhs.iter().zip(&mean_x).map(|(w, m)| w * m).sum::<f64>();
        Ok(Ridge {
            weights: rhs,
            intercept,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}
