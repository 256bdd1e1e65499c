use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv3d, Ctx, Layer, MeanZ, Param, Relu, Sequential};
use super::tensor::Tensor;
use crate::error::NetError;
use crate::scalar::Scalar;

/// Depth of the volumes every collapse head expects.
pub const HEAD_Z: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollapseKind {
    /// Full-depth z convolution, then a pointwise projection.
    ConvZ,
    /// Mean over z, then a pointwise projection.
    GapZ,
    /// Stride-2 z convolutions 36→18→9→5→3, a final 3→1, then a projection.
    ProgressiveZ,
}

impl CollapseKind {
    pub const ALL: [CollapseKind; 3] = [CollapseKind::ConvZ, CollapseKind::GapZ, CollapseKind::ProgressiveZ];

    pub fn as_str(self) -> &'static str {
        match self {
            CollapseKind::ConvZ => "ConvZ",
            CollapseKind::GapZ => "GapZ",
            CollapseKind::ProgressiveZ => "ProgressiveZ",
        }
    }
}

/// Maps `(n, c, W, W, 36)` to `(n, 1, W, W, 1)`.
pub struct CollapseHead<T> {
    pub kind: CollapseKind,
    layers: Sequential<T>,
}

impl<T: Scalar> CollapseHead<T> {
    pub fn new(kind: CollapseKind, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Sequential::default();
        match kind {
            CollapseKind::ConvZ => {
                s.push(Conv3d::new("head.zconv", channels, channels, [1, 1, HEAD_Z], [1, 1, 1], [0, 0, 0], rng));
                s.push(Relu::default());
            }
            CollapseKind::GapZ => s.push(MeanZ::default()),
            CollapseKind::ProgressiveZ => {
                for i in 0..4 {
                    s.push(Conv3d::new(&format!("head.zdown{i}"), channels, channels, [1, 1, 3], [1, 1, 2], [0, 0, 1], rng));
                    s.push(Relu::default());
                }
                s.push(Conv3d::new("head.zlast", channels, channels, [1, 1, 3], [1, 1, 1], [0, 0, 0], rng));
                s.push(Relu::default());
            }
        }
        s.push(Conv3d::pointwise("head.proj", channels, 1, rng));
        CollapseHead { kind, layers: s }
    }

    pub fn check_input(x: &Tensor<T>) -> Result<(), NetError> {
        if x.dims[4] != HEAD_Z {
            return Err(NetError::ShapeMismatch(format!(
                "collapse head needs z = {HEAD_Z}, got {}",
                x.dims[4]
            )));
        }
        Ok(())
    }

    /// Forward with the depth check.
    pub fn collapse(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>, NetError> {
        Self::check_input(x)?;
        Ok(self.forward(x, ctx))
    }
}

impl<T: Scalar> Layer<T> for CollapseHead<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let y = self.layers.forward(x, ctx);
        debug_assert_eq!(y.dims[4], 1);
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        self.layers.backward(dy)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.visit_mut(f);
    }
}
