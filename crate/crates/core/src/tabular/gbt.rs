use serde::{Deserialize, Serialize};

/// Tree node; leaves carry a value, splits send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

/// Least-squares gradient boosting: `mean(y) + lr · Σ trees`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_count: usize,
}

struct Builder<'a> {
    x: &'a [f64],
    cols: usize,
    residual: &'a [f64],
    params: GbtParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// `sorted[f]` lists this node's rows ordered by feature `f` (ties by row).
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(total / n as f64));
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&sorted, total) else {
            return id;
        };
        let mut goes_left = vec![false; self.residual.len()];
        for &r in &sorted[best.feature][..best.left_count] {
            goes_left[r] = true;
        }
        let (mut l, mut r) = (Vec::with_capacity(self.cols), Vec::with_capacity(self.cols));
        for s in sorted {
            let (a, b): (Vec<usize>, Vec<usize>) = s.into_iter().partition(|&i| goes_left[i]);
            l.push(a);
            r.push(b);
        }
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Exact scan over every feature for the largest variance reduction.
    fn best_split(&self, sorted: &[Vec<usize>], total: f64) -> Option<Best> {
        let n = sorted[0].len();
        let parent = total * total / n as f64;
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Best> = None;
        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                let row = order[i];
                left_sum += self.residual[row];
                let nl = i + 1;
                let (v, next) = (self.x[row * self.cols + f], self.x[order[i + 1] * self.cols + f]);
                if v == next || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold: 0.5 * (v + next),
                        left_count: nl,
                    });
                }
            }
        }
        best
    }
}

impl Gbt {
    pub fn fit(x: &[f64], y: &[f64], cols: usize, params: GbtParams) -> Self {
        let n = y.len();
        let base = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base; n];
        let presorted: Vec<Vec<usize>> = (0..cols)
            .map(|f| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| x[a * cols + f].total_cmp(&x[b * cols + f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let mut b = Builder {
                x,
                cols,
                residual: &residual,
                params,
                nodes: Vec::new(),
            };
            b.grow(presorted.clone(), 0);
            let tree = Tree { nodes: b.nodes };
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict_row(&x[i * cols..(i + 1) * cols]);
            }
            trees.push(tree);
        }
        Gbt {
            base,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// Prediction after the first `stages` trees.
    pub fn predict_row_staged(&self, row: &[f64], stages: usize) -> f64 {
        self.base + self.learning_rate * self.trees[..stages].iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n_trees: usize) -> GbtParams {
        GbtParams {
            n_trees,
            max_depth: 3,
            learning_rate: 0.3,
            min_leaf: 2,
        }
    }

    #[test]
    fn constant_target_stays_constant() {
        let x: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let y = vec![30.0; 40];
        let m = Gbt::fit(&x, &y, 1, params(5));
        for r in x.chunks(1) {
            assert_eq!(m.predict_row(r), 30.0);
        }
    }

    #[test]
    fn step_function_is_learned() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 20.0 { 5.0 } else { 25.0 }).collect();
        let m = Gbt::fit(&x, &y, 1, GbtParams { learning_rate: 1.0, ..params(1) });
        assert_eq!(m.predict_row(&[3.0]), 5.0);
        assert_eq!(m.predict_row(&[40.0]), 25.0);
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 19.5),
            _ => panic!("root should split"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn training_loss_never_increases(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cols = 3;
            let x: Vec<f64> = (0..60 * cols).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = x.chunks(cols).map(|r| 10.0 * r[0] + r[1] * r[2] + rng.random_range(0.0..0.5)).collect();
            let m = Gbt::fit(&x, &y, cols, params(12));
            let mse = |s: usize| {
                x.chunks(cols).zip(&y).map(|(r, t)| (m.predict_row_staged(r, s) - t).powi(2)).sum::<f64>() / y.len() as f64
            };
            for s in 1..=12 {
                prop_assert!(mse(s) <= mse(s - 1) * (1.0 + 1e-12));
            }
        }
    }
}
