//! Dense row-major tensors and convolution geometry.

use std::fmt;

use rand::{Rng, RngExt};

use crate::error::{Result, VsrError};
use crate::scalar::Scalar;

/// Dense N-dimensional array stored contiguously in row-major order.
///
/// Image tensors use the `batch × channels × height × width` layout.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(VsrError::dim(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(VsrError::Usage(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    /// Extents of a rank-4 tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(VsrError::dim(format!("expected a rank-4 tensor, got shape {s:?}"))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(VsrError::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with [`VsrError::NonFinite`] naming `what` if any element is NaN/Inf.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(VsrError::NonFinite(what.to_string()))
        }
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(VsrError::dim(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Element at a rank-4 index.
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let (_, cs, hs, ws) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let (cs, hs, ws) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + y) * ws + x] = v;
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(VsrError::dim(format!(
                "channel range {start}..{} out of {c}",
                start + len
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::from_vec(&[n, len, h, w], data)
    }

    /// Concatenation of rank-4 tensors along the channel axis.
    pub fn cat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| VsrError::Usage("cat_channels of zero tensors".into()))?;
        let (n, _, h, w) = first.dims4()?;
        let mut total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(VsrError::dim(format!(
                    "cat_channels: {:?} incompatible with {:?}",
                    p.shape, first.shape
                )));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let base = b * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Tensor::from_vec(&[n, total, h, w], data)
    }

    /// Batch item `b` as a `1 × C × H × W` tensor.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if b >= n {
            return Err(VsrError::dim(format!("batch index {b} out of {n}")));
        }
        let len = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[b * len..(b + 1) * len].to_vec())
    }

    /// Stacks `1 × C × H × W` (or any equal-shaped rank-4) tensors along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| VsrError::Usage("stack_batch of zero tensors".into()))?;
        let (_, c, h, w) = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let (tn, tc, th, tw) = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(VsrError::dim(format!(
                    "stack_batch: {:?} incompatible with {:?}",
                    t.shape, first.shape
                )));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[n, c, h, w], data)
    }
}

/// Geometry of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Stride-1, same-size `k × k` convolution with bias.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: k / 2,
            has_bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// `floor((in + 2·pad − k) / stride) + 1`, or an error when the kernel
    /// does not fit.
    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(VsrError::dim("stride must be positive"));
        }
        let span = |extent: usize, k: usize| -> Result<usize> {
            let padded = extent + 2 * self.padding;
            if padded < k {
                return Err(VsrError::dim(format!("kernel {k} larger than padded extent {padded}")));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((span(in_h, self.kernel_h)?, span(in_w, self.kernel_w)?))
    }

    /// Learnable scalars in this layer.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.taps() + if self.has_bias { self.out_channels } else { 0 }
    }
}
