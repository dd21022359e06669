use alloc::vec::Vec;

use crate::error::{usage_err, Result};
use crate::random::Rng;
use crate::{Scalar, Shape, Tensor};

/// Uniform top-left corner of a `size × size` window inside `h × w`.
pub fn random_corner(rng: &mut Rng, h: usize, w: usize, size: usize) -> Result<(usize, usize)> {
    if size == 0 || size > h || size > w {
        return Err(usage_err!("patch size {size} does not fit a {h}x{w} image"));
    }
    let y = rng.below((h - size + 1) as u64) as usize;
    let x = rng.below((w - size + 1) as u64) as usize;
    Ok((y, x))
}

/// `(1, c, size, size)` window of batch item `item` at `(y, x)`.
pub fn crop<T: Scalar>(image: &Tensor<T>, item: usize, y: usize, x: usize, size: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if item >= s.n || y + size > s.h || x + size > s.w {
        return Err(usage_err!("window {size}x{size} at ({y}, {x}) exceeds {s}"));
    }
    Ok(Tensor::from_fn(Shape::new(1, s.c, size, size), |_, c, i, j| image.at(item, c, y + i, x + j)))
}

/// `count` square patches with corners drawn uniformly from the valid range
/// of a single-image tensor.
pub fn extract_patches<T: Scalar>(image: &Tensor<T>, size: usize, count: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let s = image.shape();
    if s.n != 1 {
        return Err(usage_err!("expected a single image, got batch of {}", s.n));
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let (y, x) = random_corner(&mut rng, s.h, s.w, size)?;
            crop(image, 0, y, x, size)
        })
        .collect()
}

/// Mirror index without repeating the edge sample: `-1 → 1`, `n → n - 2`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Extends every item to `h × w` by mirroring at the bottom and right edges.
pub fn pad_reflect<T: Scalar>(image: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if h < s.h || w < s.w || s.is_empty() {
        return Err(usage_err!("cannot reflect-pad {s} to {h}x{w}"));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        image.at(n, c, reflect(y as isize, s.h), reflect(x as isize, s.w))
    }))
}

/// Top-left `h × w` window of every item.
pub fn crop_top_left<T: Scalar>(image: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if h > s.h || w > s.w {
        return Err(usage_err!("cannot crop {s} to {h}x{w}"));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| image.at(n, c, y, x)))
}
