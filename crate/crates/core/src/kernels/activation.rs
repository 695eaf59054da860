use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, slope: T, grad: &Tensor<T>) -> Tensor<T> {
    input
        .zip_map(grad, |x, g| if x > T::zero() { g } else { g * slope })
        .expect("matching shapes")
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    leaky_relu(input, T::zero())
}

/// Logistic function, evaluated so that large |x| never overflows.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    output
        .zip_map(grad, |y, g| g * y * (T::one() - y))
        .expect("matching shapes")
}
