//! Bilinear 2x spatial upsampling with half-pixel centres.
//!
//! Output pixel `o` reads source coordinate `(o + 0.5) / 2 - 0.5`, clamped to
//! the image, so constant fields stay constant up to the border.

use crate::{Scalar, Shape, Tensor};

/// Source taps `(i0, i1, frac)` for each output index along one axis.
fn axis_taps(len: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    (0..2 * len).map(move |o| {
        let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
        let i0 = (src as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    })
}

pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let ys: alloc::vec::Vec<_> = axis_taps(s.h).collect();
    let xs: alloc::vec::Vec<_> = axis_taps(s.w).collect();
    let mut out = Tensor::zeros(out_shape);
    let (ip, op) = (s.plane(), out_shape.plane());
    for k in 0..s.n * s.c {
        let src = &input.data()[k * ip..(k + 1) * ip];
        let dst = &mut out.data_mut()[k * op..(k + 1) * op];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::from_f64(ly);
            let hy = T::ONE - ly;
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::from_f64(lx);
                let hx = T::ONE - lx;
                dst[oy * 2 * s.w + ox] = hy * (hx * src[y0 * s.w + x0] + lx * src[y0 * s.w + x1])
                    + ly * (hx * src[y1 * s.w + x0] + lx * src[y1 * s.w + x1]);
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let ys: alloc::vec::Vec<_> = axis_taps(s.h).collect();
    let xs: alloc::vec::Vec<_> = axis_taps(s.w).collect();
    let mut gx = Tensor::zeros(s);
    let (ip, op) = (s.plane(), 4 * s.plane());
    for k in 0..s.n * s.c {
        let g = &grad_out.data()[k * op..(k + 1) * op];
        let dst = &mut gx.data_mut()[k * ip..(k + 1) * ip];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = T::from_f64(ly);
            let hy = T::ONE - ly;
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = T::from_f64(lx);
                let hx = T::ONE - lx;
                let v = g[oy * 2 * s.w + ox];
                dst[y0 * s.w + x0] += hy * hx * v;
                dst[y0 * s.w + x1] += hy * lx * v;
                dst[y1 * s.w + x0] += ly * hx * v;
                dst[y1 * s.w + x1] += ly * lx * v;
            }
        }
    }
    gx
}
