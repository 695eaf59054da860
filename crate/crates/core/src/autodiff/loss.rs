use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-8;

/// Mean over elements of `sqrt((pred − target)² + eps²)`.
pub fn charbonnier_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Result<T> {
    pred.expect_same_shape(target, "charbonnier_loss")?;
    if pred.numel() == 0 {
        return Ok(T::zero());
    }
    let eps2 = eps.to_f64().unwrap_or(0.0).powi(2);
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).to_f64().unwrap_or(f64::NAN);
            (d * d + eps2).sqrt()
        })
        .sum();
    Ok(T::of(total / pred.numel() as f64))
}

/// d loss / d pred.
pub fn charbonnier_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let n = T::of(pred.numel().max(1) as f64);
    let eps2 = eps * eps;
    pred.zip_map(target, |p, t| {
        let d = p - t;
        let r = (d * d + eps2).sqrt();
        if r > T::zero() {
            d / r / n
        } else {
            T::zero()
        }
    })
}
