use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm3d, Conv3d, Ctx, Dropout, Layer, Param, Relu, Sequential};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Two `[conv3 → BN? → ReLU → dropout?]` stages.
pub fn double_conv<T: Scalar>(
    name: &str,
    cin: usize,
    cout: usize,
    batch_norm: bool,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Sequential<T> {
    let mut s = Sequential::default();
    for (i, c) in [cin, cout].into_iter().enumerate() {
        s.push(Conv3d::cube3(&format!("{name}.conv{i}"), c, cout, rng));
        if batch_norm {
            s.push(BatchNorm3d::new(&format!("{name}.bn{i}"), cout));
        }
        s.push(Relu::default());
        if dropout > 0.0 {
            s.push(Dropout::new(dropout));
        }
    }
    s
}

/// `relu(main(x) + shortcut(x))`, optionally followed by dropout.
///
/// The shortcut is the identity when widths match, otherwise a pointwise conv.
pub struct ResidualBlock<T> {
    main: Sequential<T>,
    shortcut: Option<Conv3d<T>>,
    relu: Relu,
    dropout: Option<Dropout<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        batch_norm: bool,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut main = Sequential::default();
        main.push(Conv3d::cube3(&format!("{name}.conv0"), cin, cout, rng));
        if batch_norm {
            main.push(BatchNorm3d::new(&format!("{name}.bn0"), cout));
        }
        main.push(Relu::default());
        if dropout > 0.0 {
            main.push(Dropout::new(dropout));
        }
        main.push(Conv3d::cube3(&format!("{name}.conv1"), cout, cout, rng));
        if batch_norm {
            main.push(BatchNorm3d::new(&format!("{name}.bn1"), cout));
        }
        let shortcut = (cin != cout).then(|| Conv3d::pointwise(&format!("{name}.proj"), cin, cout, rng));
        ResidualBlock {
            main,
            shortcut,
            relu: Relu::default(),
            dropout: (dropout > 0.0).then(|| Dropout::new(dropout)),
        }
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let mut h = self.main.forward(x, ctx);
        match &mut self.shortcut {
            Some(proj) => h.add_assign(&proj.forward(x, ctx)),
            None => h.add_assign(x),
        }
        let h = self.relu.forward(&h, ctx);
        match &mut self.dropout {
            Some(d) => d.forward(&h, ctx),
            None => h,
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let g = match &mut self.dropout {
            Some(d) => d.backward(dy),
            None => dy.clone(),
        };
        let g = Layer::<T>::backward(&mut self.relu, &g);
        let mut dx = self.main.backward(&g);
        match &mut self.shortcut {
            Some(proj) => dx.add_assign(&proj.backward(&g)),
            None => dx.add_assign(&g),
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.main.visit(f);
        if let Some(p) = &self.shortcut {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.main.visit_mut(f);
        if let Some(p) = &mut self.shortcut {
            p.visit_mut(f);
        }
    }
}
