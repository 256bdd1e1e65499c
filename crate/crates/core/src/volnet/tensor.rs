use crate::scalar::Scalar;

/// Dense 5-D tensor laid out `(n, c, x, y, z)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: [usize; 5],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<T>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor data/dims mismatch");
        Tensor { dims, data }
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    /// Spatial extent `(x, y, z)`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    pub fn voxels(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.voxels()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenate along channels: `[a, b]`.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!(a.n(), b.n());
        assert_eq!(a.spatial(), b.spatial());
        let [n, ca, x, y, z] = a.dims;
        let cb = b.c();
        let mut out = Tensor::zeros([n, ca + cb, x, y, z]);
        for i in 0..n {
            let dst = out.sample_mut(i);
            let la = a.sample_len();
            dst[..la].copy_from_slice(a.sample(i));
            dst[la..].copy_from_slice(b.sample(i));
        }
        out
    }

    /// Inverse of [`concat_channels`](Self::concat_channels).
    pub fn split_channels(t: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
        let [n, c, x, y, z] = t.dims;
        let mut a = Tensor::zeros([n, ca, x, y, z]);
        let mut b = Tensor::zeros([n, c - ca, x, y, z]);
        let la = a.sample_len();
        for i in 0..n {
            let src = t.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..la]);
            b.sample_mut(i).copy_from_slice(&src[la..]);
        }
        (a, b)
    }

    /// Zero-pad or crop the trailing edge of each spatial axis to `target`.
    pub fn resize_spatial(&self, target: [usize; 3]) -> Tensor<T> {
        if self.spatial() == target {
            return self.clone();
        }
        let [n, c, x, y, z] = self.dims;
        let [tx, ty, tz] = target;
        let mut out = Tensor::zeros([n, c, tx, ty, tz]);
        let (mx, my, mz) = (x.min(tx), y.min(ty), z.min(tz));
        for nc in 0..n * c {
            for i in 0..mx {
                for j in 0..my {
                    let src = ((nc * x + i) * y + j) * z;
                    let dst = ((nc * tx + i) * ty + j) * tz;
                    out.data[dst..dst + mz].copy_from_slice(&self.data[src..src + mz]);
                }
            }
        }
        out
    }
}
