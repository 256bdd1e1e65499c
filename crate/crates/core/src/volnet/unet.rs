use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{double_conv, ResidualBlock};
use super::heads::{CollapseHead, CollapseKind, HEAD_Z};
use super::layers::{Ctx, Layer, MaxPool3d, Mode, Param, UpConv3d};
use super::tensor::Tensor;
use crate::error::NetError;
use crate::scalar::{lit, Scalar};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    /// Three levels of double-conv blocks.
    Model1,
    /// Two levels of double-conv blocks.
    Model2,
    /// Two levels of residual blocks.
    Model3,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Model1, Backbone::Model2, Backbone::Model3];

    pub fn levels(self) -> usize {
        match self {
            Backbone::Model1 => 3,
            Backbone::Model2 | Backbone::Model3 => 2,
        }
    }

    pub fn default_base_width(self) -> usize {
        match self {
            Backbone::Model1 => 64,
            Backbone::Model2 => 32,
            Backbone::Model3 => 30,
        }
    }

    /// Reference trainable-parameter count for the default width.
    pub fn reference_params(self) -> usize {
        match self {
            Backbone::Model1 => 21_000_000,
            Backbone::Model2 => 1_300_000,
            Backbone::Model3 => 1_200_000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Model1 => "Model1",
            Backbone::Model2 => "Model2",
            Backbone::Model3 => "Model3",
        }
    }
}

fn default_batch_norm() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub collapse: CollapseKind,
    pub in_channels: usize,
    pub base_width: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_batch_norm")]
    pub batch_norm: bool,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, collapse: CollapseKind, in_channels: usize) -> Self {
        ModelSpec {
            backbone,
            collapse,
            in_channels,
            base_width: backbone.default_base_width(),
            dropout_rate: 0.0,
            batch_norm: true,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(0.0..=0.5).contains(&self.dropout_rate) {
            return Err(NetError::BadSpec(format!("dropout_rate {} outside [0, 0.5]", self.dropout_rate)));
        }
        if self.base_width < 4 {
            return Err(NetError::BadSpec(format!("base_width {} < 4", self.base_width)));
        }
        if self.in_channels == 0 {
            return Err(NetError::BadSpec("in_channels must be positive".into()));
        }
        Ok(())
    }

    /// Checks a `(n, c, W, W, Z)` input against the spec.
    pub fn check_input(&self, dims: [usize; 5]) -> Result<(), NetError> {
        let [n, c, x, y, z] = dims;
        if n == 0 {
            return Err(NetError::ShapeMismatch("empty batch".into()));
        }
        if c != self.in_channels {
            return Err(NetError::ShapeMismatch(format!("expected {} channels, got {c}", self.in_channels)));
        }
        if x != y {
            return Err(NetError::ShapeMismatch(format!("patch is {x}×{y}, not square")));
        }
        let f = 1 << self.backbone.levels();
        if x % f != 0 || x / f < 2 {
            return Err(NetError::ShapeMismatch(format!(
                "W = {x} must be a multiple of {f} with at least 2 pixels at the bottleneck"
            )));
        }
        if z != HEAD_Z {
            return Err(NetError::ShapeMismatch(format!("expected z = {HEAD_Z}, got {z}")));
        }
        Ok(())
    }
}

/// Masked mean-squared error and its gradient with respect to `pred`.
///
/// Returns zero loss and gradient when no target is valid.
pub fn masked_mse<T: Scalar>(pred: &[T], target: &[T], valid: &[bool]) -> (T, Vec<T>) {
    let n = valid.iter().filter(|&&v| v).count();
    let mut grad = vec![T::zero(); pred.len()];
    if n == 0 {
        return (T::zero(), grad);
    }
    let inv = T::one() / T::from_usize(n).unwrap();
    let two: T = lit(2.0);
    let mut sq = Vec::with_capacity(n);
    for i in 0..pred.len() {
        if valid[i] {
            let r = pred[i] - target[i];
            sq.push(r * r);
            grad[i] = two * r * inv;
        }
    }
    (crate::scalar::pairwise_sum(&sq) * inv, grad)
}

/// A 3D U-Net backbone followed by a z-collapse head.
pub struct VolNet<T> {
    pub spec: ModelSpec,
    enc: Vec<Box<dyn Layer<T>>>,
    pools: Vec<MaxPool3d>,
    bottleneck: Box<dyn Layer<T>>,
    ups: Vec<UpConv3d<T>>,
    dec: Vec<Box<dyn Layer<T>>>,
    head: CollapseHead<T>,
    skip_channels: Vec<usize>,
    up_spatial: Vec<[usize; 3]>,
}

fn block<T: Scalar>(spec: &ModelSpec, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Box<dyn Layer<T>> {
    match spec.backbone {
        Backbone::Model1 | Backbone::Model2 => {
            Box::new(double_conv(name, cin, cout, spec.batch_norm, spec.dropout_rate, rng))
        }
        Backbone::Model3 => Box::new(ResidualBlock::new(name, cin, cout, spec.batch_norm, spec.dropout_rate, rng)),
    }
}

/// Builds a freshly initialized network. All weights derive from `seed`.
///
/// Panics if a default-width model misses its parameter budget.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<VolNet<T>, NetError> {
    spec.validate()?;
    let mut rng = rng_for(seed, "volnet.init");
    let levels = spec.backbone.levels();
    let w = |l: usize| spec.base_width << l;
    let mut enc = Vec::new();
    let mut dec = Vec::new();
    let mut ups = Vec::new();
    for l in 0..levels {
        let cin = if l == 0 { spec.in_channels } else { w(l - 1) };
        enc.push(block(spec, &format!("enc{l}"), cin, w(l), &mut rng));
    }
    let bottleneck = block(spec, "bottleneck", w(levels - 1), w(levels), &mut rng);
    for l in 0..levels {
        ups.push(UpConv3d::new(&format!("up{l}"), w(l + 1), w(l), &mut rng));
        dec.push(block(spec, &format!("dec{l}"), 2 * w(l), w(l), &mut rng));
    }
    let head = CollapseHead::new(spec.collapse, w(0), &mut rng);
    let net = VolNet {
        spec: spec.clone(),
        enc,
        pools: (0..levels).map(|_| MaxPool3d::default()).collect(),
        bottleneck,
        ups,
        dec,
        head,
        skip_channels: (0..levels).map(w).collect(),
        up_spatial: vec![[0; 3]; levels],
    };
    if spec.base_width == spec.backbone.default_base_width() {
        let (count, reference) = (net.trainable_params(), spec.backbone.reference_params());
        assert!(
            count.abs_diff(reference) * 100 <= reference * 15,
            "{} default has {count} parameters, budget {reference} ± 15%",
            spec.backbone.as_str()
        );
    }
    Ok(net)
}

impl<T: Scalar> VolNet<T> {
    pub fn trainable_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.value.len();
            }
        });
        n
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for b in &self.enc {
            b.visit(f);
        }
        self.bottleneck.visit(f);
        for (u, d) in self.ups.iter().zip(&self.dec) {
            u.visit(f);
            d.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in &mut self.enc {
            b.visit_mut(f);
        }
        self.bottleneck.visit_mut(f);
        for (u, d) in self.ups.iter_mut().zip(&mut self.dec) {
            u.visit_mut(f);
            d.visit_mut(f);
        }
        self.head.visit_mut(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    /// Unchecked forward: `(n, c, W, W, 36)` → `(n, 1, W, W, 1)`.
    fn forward_raw(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let levels = self.enc.len();
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        for l in 0..levels {
            h = self.enc[l].forward(&h, ctx);
            let pooled = Layer::<T>::forward(&mut self.pools[l], &h, ctx);
            skips.push(h);
            h = pooled;
        }
        h = self.bottleneck.forward(&h, ctx);
        for l in (0..levels).rev() {
            let up = self.ups[l].forward(&h, ctx);
            self.up_spatial[l] = up.spatial();
            let up = up.resize_spatial(skips[l].spatial());
            h = self.dec[l].forward(&Tensor::concat_channels(&skips[l], &up), ctx);
        }
        self.head.forward(&h, ctx)
    }

    fn backward_raw(&mut self, dy: &Tensor<T>) {
        let levels = self.enc.len();
        let mut g = self.head.backward(dy);
        let mut dskips = Vec::with_capacity(levels);
        for l in 0..levels {
            let gcat = self.dec[l].backward(&g);
            let (dskip, dup) = Tensor::split_channels(&gcat, self.skip_channels[l]);
            dskips.push(dskip);
            g = self.ups[l].backward(&dup.resize_spatial(self.up_spatial[l]));
        }
        g = self.bottleneck.backward(&g);
        for l in (0..levels).rev() {
            g = Layer::<T>::backward(&mut self.pools[l], &g);
            g.add_assign(&dskips[l]);
            g = self.enc[l].backward(&g);
        }
    }

    /// Predicted height maps, shape `(n, 1, W, W, 1)`.
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>, NetError> {
        self.spec.check_input(x.dims)?;
        let y = self.forward_raw(x, ctx);
        if !y.is_finite() {
            return Err(NetError::NonFinite("network output".into()));
        }
        Ok(y)
    }

    /// Eval-mode forward.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.forward(x, &mut Ctx::new(Mode::Eval, 0))
    }

    /// Runs a forward/backward pass of the masked MSE and leaves the
    /// parameter gradients in each [`Param::grad`]. Returns the loss.
    ///
    /// `target` and `valid` are laid out `(n, W, W)`.
    pub fn gradients(&mut self, x: &Tensor<T>, target: &[T], valid: &[bool], ctx: &mut Ctx) -> Result<T, NetError> {
        self.spec.check_input(x.dims)?;
        let [n, _, w, _, _] = x.dims;
        if target.len() != n * w * w || valid.len() != target.len() {
            return Err(NetError::ShapeMismatch(format!(
                "targets have {} values, expected {}",
                target.len(),
                n * w * w
            )));
        }
        self.zero_grad();
        let y = self.forward_raw(x, ctx);
        let (loss, grad) = masked_mse(&y.data, target, valid);
        if !loss.is_finite() {
            return Err(NetError::NonFinite("loss".into()));
        }
        self.backward_raw(&Tensor::from_vec(y.dims, grad));
        Ok(loss)
    }

    /// Snapshot of every parameter value (trainable and buffers) in visit order.
    pub fn state(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.value.clone()));
        out
    }

    pub fn load_state(&mut self, state: &[Vec<T>]) {
        let mut it = state.iter();
        self.visit_mut(&mut |p| {
            let v = it.next().expect("state has too few tensors");
            p.value.copy_from_slice(v);
        });
        assert!(it.next().is_none(), "state has too many tensors");
    }
}

impl<T: Scalar> PartialEq for VolNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.state() == other.state()
    }
}

impl<T: Scalar> std::fmt::Debug for VolNet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VolNet")
            .field("spec", &self.spec)
            .field("trainable_params", &self.trainable_params())
            .finish()
    }
}
