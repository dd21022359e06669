use crate::random::Rng;
use crate::{Scalar, Shape, Tensor};

pub fn rand_tensor<T: Scalar>(shape: impl Into<Shape>, seed: u64, scale: f64) -> Tensor<T> {
    Rng::new(seed).uniform_tensor(shape, -scale, scale)
}

/// `max |a - b| <= tol * max(1, max |b|)`.
pub fn rel_close<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, tol: f64) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let peak = b.data().iter().map(|v| v.to_f64().abs()).fold(1.0, f64::max);
    a.max_abs_diff(b) <= tol * peak
}
