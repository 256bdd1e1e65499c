use crate::scalar::{lit, Scalar};
use crate::volnet::VolNet;

/// Adam over every trainable parameter of a network, in visit order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, net: &mut VolNet<T>) {
        self.t += 1;
        let (b1, b2): (T, T) = (lit(self.beta1), lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step: T = lit(self.lr / c1);
        let c2: T = lit(c2);
        let eps: T = lit(self.eps);
        let first = self.m.is_empty();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut k = 0;
        net.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if first {
                ms.push(vec![T::zero(); p.value.len()]);
                vs.push(vec![T::zero(); p.value.len()]);
            }
            let (m, v) = (&mut ms[k], &mut vs[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                p.value[i] -= step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
            k += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score; signals a stop after `patience`
/// consecutive epochs without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volnet::{build_model, Backbone, CollapseKind, ModelSpec};

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        let spec = ModelSpec {
            base_width: 4,
            ..ModelSpec::new(Backbone::Model2, CollapseKind::GapZ, 1)
        };
        let mut net = build_model::<f64>(&spec, 0).unwrap();
        let before = net.state();
        let mut adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        for _ in 0..3 {
            adam.step(&mut net);
        }
        assert_eq!(net.state(), before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let spec = ModelSpec {
            base_width: 4,
            batch_norm: false,
            ..ModelSpec::new(Backbone::Model2, CollapseKind::GapZ, 1)
        };
        let mut net = build_model::<f64>(&spec, 0).unwrap();
        let before = net.state();
        net.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.5));
        Adam::new(1e-2, 0.9, 0.999, 1e-8).step(&mut net);
        for (a, b) in before.iter().flatten().zip(net.state().iter().flatten()) {
            assert!((a - b - 1e-2).abs() < 1e-9);
        }
    }

    #[test]
    fn early_stopping_on_monotone_worsening() {
        let mut es = EarlyStopping::new(5);
        let mut stopped = None;
        for epoch in 1..=20 {
            if es.observe(epoch, epoch as f64) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(6));
        assert_eq!(es.best_epoch, 1);
    }
}
