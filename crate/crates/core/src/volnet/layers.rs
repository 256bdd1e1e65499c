//! Layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; calling
//! `backward` consumes that cache and accumulates parameter gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call state threaded through a forward pass.
///
/// `batch_stats` selects batch statistics in batch norm; it defaults to
/// `mode == Train` but can be set independently.
pub struct Ctx {
    pub mode: Mode,
    pub batch_stats: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Ctx {
            mode,
            batch_stats: mode == Mode::Train,
            rng: rand::SeedableRng::seed_from_u64(seed),
        }
    }
}

/// A named tensor owned by a layer: trainable weights or a statistics buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Param {
            name,
            shape,
            value,
            grad: vec![T::zero(); n],
            trainable: true,
        }
    }

    pub fn buffer(name: String, shape: Vec<usize>, value: Vec<T>) -> Self {
        Param {
            name,
            shape,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T>;

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T>;

    fn visit(&self, _f: &mut dyn FnMut(&Param<T>)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param<T>)) {}
}

fn he_normal<T: Scalar>(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
        .collect()
}

/// Output z indices `lo..hi` whose tap `c` lands inside `0..sz`.
fn z_range(oz: usize, sz: usize, tz: usize, c: usize, pz: usize) -> (usize, usize) {
    let lo = if c >= pz { 0 } else { (pz - c).div_ceil(tz) };
    let hi = if sz + pz > c { ((sz + pz - c - 1) / tz + 1).min(oz) } else { 0 };
    (lo.min(hi), hi)
}

/// 3-D convolution with per-axis kernel, stride and zero padding.
pub struct Conv3d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cin: usize,
    cout: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = cin * kernel.iter().product::<usize>();
        Conv3d {
            weight: Param::new(
                format!("{name}.weight"),
                vec![cout, cin, kernel[0], kernel[1], kernel[2]],
                he_normal(cout * k, k, rng),
            ),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]),
            cin,
            cout,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    /// Same-size 3×3×3 convolution.
    pub fn cube3(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, cin, cout, [3, 3, 3], [1, 1, 1], [1, 1, 1], rng)
    }

    /// Pointwise projection.
    pub fn pointwise(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, cin, cout, [1, 1, 1], [1, 1, 1], [0, 0, 0], rng)
    }

    pub fn output_spatial(&self, s: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = s[a] + 2 * self.pad[a];
            if padded < self.kernel[a] {
                return None;
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn k_rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    /// Unfold one sample into a `(cin·kx·ky·kz) × (ox·oy·oz)` column matrix.
    fn im2col(&self, src: &[T], s: [usize; 3], o: [usize; 3], col: &mut [T]) {
        let [sx, sy, sz] = s;
        let [ox, oy, oz] = o;
        let [kx, ky, kz] = self.kernel;
        let [tx, ty, tz] = self.stride;
        let [px, py, pz] = self.pad;
        let p = ox * oy * oz;
        for ci in 0..self.cin {
            for a in 0..kx {
                for b in 0..ky {
                    for c in 0..kz {
                        let row = ((ci * kx + a) * ky + b) * kz + c;
                        let dst = &mut col[row * p..(row + 1) * p];
                        for i in 0..ox {
                            let ix = (i * tx + a) as isize - px as isize;
                            for j in 0..oy {
                                let jy = (j * ty + b) as isize - py as isize;
                                let d = &mut dst[(i * oy + j) * oz..(i * oy + j + 1) * oz];
                                if ix < 0 || ix >= sx as isize || jy < 0 || jy >= sy as isize {
                                    d.iter_mut().for_each(|v| *v = T::zero());
                                    continue;
                                }
                                let base = ((ci * sx + ix as usize) * sy + jy as usize) * sz;
                                let (lo, hi) = z_range(oz, sz, tz, c, pz);
                                d[..lo].iter_mut().for_each(|v| *v = T::zero());
                                d[hi..].iter_mut().for_each(|v| *v = T::zero());
                                if tz == 1 {
                                    let start = base + lo + c - pz;
                                    d[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                                } else {
                                    for (k, v) in d[lo..hi].iter_mut().enumerate() {
                                        *v = src[base + (k + lo) * tz + c - pz];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold a column-gradient matrix back onto the input grid (accumulating).
    fn col2im(&self, col: &[T], s: [usize; 3], o: [usize; 3], dst: &mut [T]) {
        let [sx, sy, sz] = s;
        let [ox, oy, oz] = o;
        let [kx, ky, kz] = self.kernel;
        let [tx, ty, tz] = self.stride;
        let [px, py, pz] = self.pad;
        let p = ox * oy * oz;
        for ci in 0..self.cin {
            for a in 0..kx {
                for b in 0..ky {
                    for c in 0..kz {
                        let row = ((ci * kx + a) * ky + b) * kz + c;
                        let srow = &col[row * p..(row + 1) * p];
                        for i in 0..ox {
                            let ix = (i * tx + a) as isize - px as isize;
                            if ix < 0 || ix >= sx as isize {
                                continue;
                            }
                            for j in 0..oy {
                                let jy = (j * ty + b) as isize - py as isize;
                                if jy < 0 || jy >= sy as isize {
                                    continue;
                                }
                                let base = ((ci * sx + ix as usize) * sy + jy as usize) * sz;
                                let s_seg = &srow[(i * oy + j) * oz..(i * oy + j + 1) * oz];
                                let (lo, hi) = z_range(oz, sz, tz, c, pz);
                                if tz == 1 {
                                    let start = base + lo + c - pz;
                                    for (d, &g) in dst[start..start + hi - lo].iter_mut().zip(&s_seg[lo..hi]) {
                                        *d += g;
                                    }
                                } else {
                                    for (k, &g) in s_seg[lo..hi].iter().enumerate() {
                                        dst[base + (k + lo) * tz + c - pz] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> for Conv3d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        assert_eq!(x.c(), self.cin, "{}: channel mismatch", self.weight.name);
        let s = x.spatial();
        let o = self.output_spatial(s).expect("conv input smaller than kernel");
        let p = o[0] * o[1] * o[2];
        let k = self.k_rows();
        let mut out = Tensor::zeros([x.n(), self.cout, o[0], o[1], o[2]]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for i in 0..x.n() {
            let dst = out.sample_mut(i);
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            let b: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), s, o, &mut col);
                &col
            };
            T::gemm(self.cout, k, p, &self.weight.value, k as isize, 1, b, p as isize, 1, T::one(), dst, p as isize, 1);
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("backward before forward");
        let s = x.spatial();
        let o = dy.spatial();
        let p = o[0] * o[1] * o[2];
        let k = self.k_rows();
        let mut dx = Tensor::zeros(x.dims);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        let mut dcol = vec![T::zero(); k * p];
        for i in 0..x.n() {
            let g = dy.sample(i);
            for (co, chunk) in g.chunks(p).enumerate() {
                let mut acc = T::zero();
                for &v in chunk {
                    acc += v;
                }
                self.bias.grad[co] += acc;
            }
            let b: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), s, o, &mut col);
                &col
            };
            // dW += dY · colᵀ
            T::gemm(self.cout, p, k, g, p as isize, 1, b, 1, p as isize, T::one(), &mut self.weight.grad, k as isize, 1);
            // dcol = Wᵀ · dY
            if self.is_pointwise() {
                T::gemm(k, self.cout, p, &self.weight.value, 1, k as isize, g, p as isize, 1, T::zero(), dx.sample_mut(i), p as isize, 1);
            } else {
                T::gemm(k, self.cout, p, &self.weight.value, 1, k as isize, g, p as isize, 1, T::zero(), &mut dcol, p as isize, 1);
                self.col2im(&dcol, s, o, dx.sample_mut(i));
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// 2×2×2 transposed convolution with stride 2 (doubles each spatial axis).
pub struct UpConv3d<T> {
    /// Stored `(cin, cout·8)`, column index `o·8 + (i·4 + j·2 + k)`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    cin: usize,
    cout: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> UpConv3d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        UpConv3d {
            weight: Param::new(
                format!("{name}.weight"),
                vec![cin, cout, 2, 2, 2],
                he_normal(cin * cout * 8, cin, rng),
            ),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]),
            cin,
            cout,
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for UpConv3d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        assert_eq!(x.c(), self.cin);
        let [sx, sy, sz] = x.spatial();
        let p = sx * sy * sz;
        let m = self.cout * 8;
        let mut out = Tensor::zeros([x.n(), self.cout, 2 * sx, 2 * sy, 2 * sz]);
        let mut tmp = vec![T::zero(); m * p];
        let (ox, oy, oz) = (2 * sx, 2 * sy, 2 * sz);
        for n in 0..x.n() {
            T::gemm(m, self.cin, p, &self.weight.value, 1, m as isize, x.sample(n), p as isize, 1, T::zero(), &mut tmp, p as isize, 1);
            let dst = out.sample_mut(n);
            for o in 0..self.cout {
                let b = self.bias.value[o];
                for t in 0..8 {
                    let (di, dj, dk) = (t / 4, (t / 2) % 2, t % 2);
                    let row = &tmp[(o * 8 + t) * p..(o * 8 + t + 1) * p];
                    for i in 0..sx {
                        for j in 0..sy {
                            let obase = ((o * ox + 2 * i + di) * oy + 2 * j + dj) * oz + dk;
                            let ibase = (i * sy + j) * sz;
                            for k in 0..sz {
                                dst[obase + 2 * k] = row[ibase + k] + b;
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("backward before forward");
        let [sx, sy, sz] = x.spatial();
        let p = sx * sy * sz;
        let m = self.cout * 8;
        let (ox, oy, oz) = (2 * sx, 2 * sy, 2 * sz);
        let mut dx = Tensor::zeros(x.dims);
        let mut dtmp = vec![T::zero(); m * p];
        for n in 0..x.n() {
            let g = dy.sample(n);
            for o in 0..self.cout {
                let mut bacc = T::zero();
                for t in 0..8 {
                    let (di, dj, dk) = (t / 4, (t / 2) % 2, t % 2);
                    let row = &mut dtmp[(o * 8 + t) * p..(o * 8 + t + 1) * p];
                    for i in 0..sx {
                        for j in 0..sy {
                            let obase = ((o * ox + 2 * i + di) * oy + 2 * j + dj) * oz + dk;
                            let ibase = (i * sy + j) * sz;
                            for k in 0..sz {
                                let v = g[obase + 2 * k];
                                row[ibase + k] = v;
                                bacc += v;
                            }
                        }
                    }
                }
                self.bias.grad[o] += bacc;
            }
            // dW (cin × m) += x (cin × p) · dtmpᵀ (p × m)
            T::gemm(self.cin, p, m, x.sample(n), p as isize, 1, &dtmp, 1, p as isize, T::one(), &mut self.weight.grad, m as isize, 1);
            // dx (cin × p) = W (cin × m) · dtmp (m × p)
            T::gemm(self.cin, m, p, &self.weight.value, m as isize, 1, &dtmp, p as isize, 1, T::zero(), dx.sample_mut(n), p as isize, 1);
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Batch normalization over `(n, x, y, z)` per channel.
pub struct BatchNorm3d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    eps: T,
    momentum: T,
    cache: Option<BnCache<T>>,
}

struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Scalar> BatchNorm3d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm3d {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![T::one(); channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![T::zero(); channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![T::zero(); channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![T::one(); channels]),
            eps: lit(1e-5),
            momentum: lit(0.1),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm3d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let (n, c, v) = (x.n(), x.c(), x.voxels());
        let count = n * v;
        let train = ctx.batch_stats;
        let mut xhat = Tensor::zeros(x.dims);
        let mut out = Tensor::zeros(x.dims);
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut s = T::zero();
                for i in 0..n {
                    for &val in &x.sample(i)[ch * v..(ch + 1) * v] {
                        s += val;
                    }
                }
                let mean = s / T::from_usize(count).unwrap();
                let mut ss = T::zero();
                for i in 0..n {
                    for &val in &x.sample(i)[ch * v..(ch + 1) * v] {
                        ss += (val - mean) * (val - mean);
                    }
                }
                let var = ss / T::from_usize(count).unwrap();
                let unbiased = if count > 1 {
                    ss / T::from_usize(count - 1).unwrap()
                } else {
                    var
                };
                let m = self.momentum;
                self.running_mean.value[ch] = (T::one() - m) * self.running_mean.value[ch] + m * mean;
                self.running_var.value[ch] = (T::one() - m) * self.running_var.value[ch] + m * unbiased;
                (mean, var)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            let is = T::one() / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                let off = i * c * v + ch * v;
                for k in off..off + v {
                    let h = (x.data[k] - mean) * is;
                    xhat.data[k] = h;
                    out.data[k] = g * h + b;
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, train });
        out
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std, train } = self.cache.take().expect("backward before forward");
        let (n, c, v) = (dy.n(), dy.c(), dy.voxels());
        let count = T::from_usize(n * v).unwrap();
        let mut dx = Tensor::zeros(dy.dims);
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..n {
                let off = i * c * v + ch * v;
                for k in off..off + v {
                    sum_dy += dy.data[k];
                    sum_dy_xhat += dy.data[k] * xhat.data[k];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let g = self.gamma.value[ch];
            let is = inv_std[ch];
            for i in 0..n {
                let off = i * c * v + ch * v;
                for k in off..off + v {
                    dx.data[k] = if train {
                        g * is * (dy.data[k] - sum_dy / count - xhat.data[k] * sum_dy_xhat / count)
                    } else {
                        g * is * dy.data[k]
                    };
                }
            }
        }
        dx
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        self.mask = x.data.iter().map(|&v| v > T::zero()).collect();
        Tensor {
            dims: x.dims,
            data: x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let data = dy
            .data
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor { dims: dy.dims, data }
    }
}

/// Inverted element-wise dropout; identity in eval mode or at rate 0.
pub struct Dropout<T> {
    rate: f64,
    scale: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Dropout { rate, scale: None }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        if ctx.mode == Mode::Eval || self.rate <= 0.0 {
            self.scale = None;
            return x.clone();
        }
        let keep: T = lit(1.0 / (1.0 - self.rate));
        let scale: Vec<T> = (0..x.data.len())
            .map(|_| if ctx.rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        let data = x.data.iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        self.scale = Some(scale);
        Tensor { dims: x.dims, data }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match self.scale.take() {
            None => dy.clone(),
            Some(scale) => Tensor {
                dims: dy.dims,
                data: dy.data.iter().zip(&scale).map(|(&g, &s)| g * s).collect(),
            },
        }
    }
}

/// 2×2×2 max pooling with stride 2; odd extents floor.
#[derive(Default)]
pub struct MaxPool3d {
    argmax: Vec<usize>,
    in_dims: [usize; 5],
}

impl<T: Scalar> Layer<T> for MaxPool3d {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, sx, sy, sz] = x.dims;
        let (ox, oy, oz) = (sx / 2, sy / 2, sz / 2);
        let mut out = Tensor::zeros([n, c, ox, oy, oz]);
        self.argmax = vec![0; out.data.len()];
        self.in_dims = x.dims;
        let mut w = 0;
        for nc in 0..n * c {
            for i in 0..ox {
                for j in 0..oy {
                    for k in 0..oz {
                        let mut best_idx = ((nc * sx + 2 * i) * sy + 2 * j) * sz + 2 * k;
                        let mut best = x.data[best_idx];
                        for t in 1..8 {
                            let (a, b, cc) = (t / 4, (t / 2) % 2, t % 2);
                            let idx = ((nc * sx + 2 * i + a) * sy + 2 * j + b) * sz + 2 * k + cc;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                        out.data[w] = best;
                        self.argmax[w] = best_idx;
                        w += 1;
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(self.in_dims);
        for (&g, &idx) in dy.data.iter().zip(&self.argmax) {
            dx.data[idx] += g;
        }
        dx
    }
}

/// Mean over the z axis: `(n, c, x, y, z) → (n, c, x, y, 1)`.
#[derive(Default)]
pub struct MeanZ {
    z: usize,
}

impl<T: Scalar> Layer<T> for MeanZ {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Tensor<T> {
        let [n, c, sx, sy, sz] = x.dims;
        self.z = sz;
        let inv = T::one() / T::from_usize(sz).unwrap();
        let data = x
            .data
            .chunks(sz)
            .map(|col| {
                // Summed in sorted order, so the mean is bit-exact under z permutation.
                let mut sorted = col.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let mut s = T::zero();
                for v in sorted {
                    s += v;
                }
                s * inv
            })
            .collect();
        Tensor::from_vec([n, c, sx, sy, 1], data)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let [n, c, sx, sy, _] = dy.dims;
        let inv = T::one() / T::from_usize(self.z).unwrap();
        let data = dy.data.iter().flat_map(|&g| std::iter::repeat_n(g * inv, self.z)).collect();
        Tensor::from_vec([n, c, sx, sy, self.z], data)
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut h = first.forward(x, ctx);
        for l in iter {
            h = l.forward(&h, ctx);
        }
        h
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}
