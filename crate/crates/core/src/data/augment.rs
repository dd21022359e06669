//! The eight symmetries of a square.
//!
//! Code `r + 4f` (`r` in `0..4`, `f` in `0..2`) mirrors the patch
//! left-right when `f = 1` and then rotates it `r` quarter turns
//! counter-clockwise.

use crate::error::{usage_err, Result};
use crate::{Scalar, Tensor};

pub const AUGMENT_CODES: u8 = 8;

fn split(code: u8) -> (u8, bool) {
    (code % 4, code >= 4)
}

/// Code of "apply `first`, then `second`".
pub fn compose(first: u8, second: u8) -> u8 {
    let (ra, fa) = split(first);
    let (rb, fb) = split(second);
    // A mirror conjugates a rotation into its inverse.
    let r = if fb { (rb + 4 - ra) % 4 } else { (rb + ra) % 4 };
    r + 4 * u8::from(fa ^ fb)
}

pub fn inverse(code: u8) -> u8 {
    match split(code) {
        (r, false) => (4 - r) % 4,
        (_, true) => code,
    }
}

fn mirror<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let w = t.shape().w;
    Tensor::from_fn(t.shape(), |n, c, y, x| t.at(n, c, y, w - 1 - x))
}

fn rotate_ccw<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let out = crate::Shape::new(s.n, s.c, s.w, s.h);
    Tensor::from_fn(out, |n, c, y, x| t.at(n, c, x, s.w - 1 - y))
}

/// Applies symmetry `code` to every plane of `t`.
pub fn augment<T: Scalar>(t: &Tensor<T>, code: u8) -> Result<Tensor<T>> {
    if code >= AUGMENT_CODES {
        return Err(usage_err!("augment code must be below 8, got {code}"));
    }
    let (r, f) = split(code);
    let s = t.shape();
    if r % 2 == 1 && s.h != s.w {
        return Err(usage_err!("quarter-turn rotation needs a square patch, got {}x{}", s.h, s.w));
    }
    let mut out = if f { mirror(t) } else { t.clone() };
    for _ in 0..r {
        out = rotate_ccw(&out);
    }
    Ok(out)
}
