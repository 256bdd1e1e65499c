use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Brute-force k-nearest-neighbour regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub cols: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Knn {
    pub fn fit(x: &[f64], y: &[f64], cols: usize, k: usize) -> Self {
        Knn {
            k,
            cols,
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    /// Mean target of the `k` nearest rows (Euclidean), ties to the lower row index.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .x
            .chunks(self.cols)
            .enumerate()
            .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        d[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.par_chunks(self.cols).map(|r| self.predict_row(r)).collect()
    }
}
