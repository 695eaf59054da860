//! Optical flow between neighbouring frames.
//!
//! Flows are `N × 2 × H × W`: channel 0 is the horizontal displacement and
//! channel 1 the vertical one, in LR pixels. A flow `s` from frame `i` to
//! frame `j` satisfies `frame_j(x + s(x)) ≈ frame_i(x)`, so warping frame
//! `j` (or its features) with `s` aligns it to frame `i`.

mod cache;
mod pairs;
mod pyramidal;

pub use cache::{FlowCache, FLOW_CACHE_MAGIC, FLOW_CACHE_VERSION};
pub use pairs::{flow_pairs, flow_pairs_cached, Direction, FlowPairs};
pub use pyramidal::{estimate_pyramidal, PyramidalFlow};

use crate::error::{Result, VsrError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default cap on flow magnitude, in LR pixels.
pub const DEFAULT_MAX_FLOW: f32 = 32.0;

/// Per-pixel displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> FlowField<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        let (_, c, _, _) = tensor.dims4()?;
        if c != 2 {
            return Err(VsrError::dim(format!(
                "flow needs 2 channels, got shape {:?}",
                tensor.shape()
            )));
        }
        tensor.check_finite("flow field")?;
        Ok(FlowField(tensor))
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros(&[n, 2, h, w]))
    }

    /// Uniform displacement `(dx, dy)` everywhere.
    pub fn uniform(n: usize, h: usize, w: usize, dx: T, dy: T) -> Self {
        let plane = h * w;
        let mut data = Vec::with_capacity(n * 2 * plane);
        for _ in 0..n {
            data.extend(std::iter::repeat_n(dx, plane));
            data.extend(std::iter::repeat_n(dy, plane));
        }
        FlowField(Tensor::from_vec(&[n, 2, h, w], data).expect("flow shape"))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn is_zero(&self) -> bool {
        self.0.data().iter().all(|v| *v == T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField(self.0.cast())
    }

    /// Rescales any vector longer than `cap` down to length `cap`.
    pub fn cap_magnitude(&mut self, cap: T) {
        let (n, _, h, w) = self.0.dims4().expect("flow is rank 4");
        let plane = h * w;
        let data = self.0.data_mut();
        for b in 0..n {
            for q in 0..plane {
                let (ix, iy) = ((b * 2) * plane + q, (b * 2 + 1) * plane + q);
                let norm = (data[ix] * data[ix] + data[iy] * data[iy]).sqrt();
                if norm > cap {
                    let s = cap / norm;
                    data[ix] = data[ix] * s;
                    data[iy] = data[iy] * s;
                }
            }
        }
    }
}

/// Source of flow estimates between two frames.
pub trait FlowProvider: Sync {
    /// Flow from `reference` to `neighbor` (see the module docs for the convention).
    fn estimate(&self, reference: &Tensor, neighbor: &Tensor) -> Result<FlowField>;

    /// Whether the provider carries learnable parameters.
    fn is_trainable(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// Provider that always reports zero motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFlow;

impl FlowProvider for ZeroFlow {
    fn estimate(&self, reference: &Tensor, neighbor: &Tensor) -> Result<FlowField> {
        reference.expect_same_shape(neighbor, "flow estimate")?;
        let (n, _, h, w) = reference.dims4()?;
        Ok(FlowField::zeros(n, h, w))
    }

    fn name(&self) -> &str {
        "zero"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_scales_long_vectors_only() {
        let mut f = FlowField::<f32>::uniform(1, 1, 2, 30.0, 40.0);
        f.cap_magnitude(10.0);
        assert!((f.tensor().data()[0] - 6.0).abs() < 1e-6);
        assert!((f.tensor().data()[2] - 8.0).abs() < 1e-6);
        let mut g = FlowField::<f32>::uniform(1, 1, 1, 1.0, 1.0);
        g.cap_magnitude(10.0);
        assert_eq!(g.tensor().data(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(FlowField::new(Tensor::<f32>::zeros(&[1, 3, 2, 2])).is_err());
    }
}
