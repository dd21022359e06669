//! Modulated deformable convolution.
//!
//! For output position `p` and kernel tap `i` the input is read at
//! `p_i + Δp_i`, where `p_i` is the regular sampling position and `Δp_i`
//! a fractional learned offset. The read uses bilinear interpolation over
//! the four surrounding pixels, with pixels outside the image counting as
//! zero, and is scaled by the modulation scalar `Δm_i`:
//!
//! `y(p) = Σ_i w_i · x(p_i + Δp_i) · Δm_i + b`
//!
//! Offsets are laid out as `(n, 2K, oh, ow)` with channel pairs
//! `(2i, 2i+1) = (Δy, Δx)` for taps in row-major kernel order; masks are
//! `(n, K, oh, ow)`. One offset set is shared by all input channels.
//!
//! At exactly integer coordinates the interpolation weights are taken from
//! the cell whose top-left corner is `floor(y), floor(x)`, so the derivative
//! with respect to the coordinate there is the one-sided (right) derivative.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{conv2d_output_shape, ConvSpec};
use crate::error::{config_err, Result};
use crate::scalar::{gemm, MatRef};
use crate::{Scalar, Shape, Tensor};

const COL_BLOCK: usize = 1 << 21;

/// Bilinear interpolation footprint of one sampling point.
#[derive(Clone, Copy, Debug)]
struct Footprint<T> {
    idx: [usize; 4],
    ok: [bool; 4],
    ly: T,
    lx: T,
}

impl<T: Scalar> Footprint<T> {
    #[inline]
    fn new(h: usize, w: usize, y: T, x: T) -> Self {
        let fy = y.floor();
        let fx = x.floor();
        let (ly, lx) = (y - fy, x - fx);
        let y0 = fy.to_f64();
        let x0 = fx.to_f64();
        let mut idx = [0usize; 4];
        let mut ok = [false; 4];
        // f64 -> isize saturates, so huge offsets stay out of bounds
        let (y0, x0) = (y0 as isize, x0 as isize);
        for (j, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let (yy, xx) = (y0.saturating_add(dy), x0.saturating_add(dx));
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                idx[j] = yy as usize * w + xx as usize;
                ok[j] = true;
            }
        }
        Footprint { idx, ok, ly, lx }
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let hy = T::ONE - self.ly;
        let hx = T::ONE - self.lx;
        [hy * hx, hy * self.lx, self.ly * hx, self.ly * self.lx]
    }

    #[inline]
    fn corners(&self, plane: &[T]) -> [T; 4] {
        let mut f = [T::ZERO; 4];
        for j in 0..4 {
            if self.ok[j] {
                f[j] = plane[self.idx[j]];
            }
        }
        f
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        let f = self.corners(plane);
        let wt = self.weights();
        wt[0] * f[0] + wt[1] * f[1] + wt[2] * f[2] + wt[3] * f[3]
    }
}

/// Samples channel `channel` of batch item `batch` at fractional `(y, x)`.
pub fn bilinear_sample<T: Scalar>(feature: &Tensor<T>, y: T, x: T, batch: usize, channel: usize) -> T {
    let s = feature.shape();
    let start = feature.offset(batch, channel, 0, 0);
    let plane = &feature.data()[start..start + s.plane()];
    Footprint::new(s.h, s.w, y, x).sample(plane)
}

/// Value and `(d/dy, d/dx)` of the bilinear sample.
pub fn bilinear_sample_grad<T: Scalar>(feature: &Tensor<T>, y: T, x: T, batch: usize, channel: usize) -> (T, T, T) {
    let s = feature.shape();
    let start = feature.offset(batch, channel, 0, 0);
    let plane = &feature.data()[start..start + s.plane()];
    let fp = Footprint::new(s.h, s.w, y, x);
    let f = fp.corners(plane);
    let (dy, dx) = coord_grad(&fp, &f);
    (fp.sample(plane), dy, dx)
}

#[inline]
fn coord_grad<T: Scalar>(fp: &Footprint<T>, f: &[T; 4]) -> (T, T) {
    let hy = T::ONE - fp.ly;
    let hx = T::ONE - fp.lx;
    let dy = hx * (f[2] - f[0]) + fp.lx * (f[3] - f[1]);
    let dx = hy * (f[1] - f[0]) + fp.ly * (f[3] - f[2]);
    (dy, dx)
}

/// Regular (undeformed) sampling coordinate of tap `(ki, kj)` for output `(oy, ox)`.
pub fn base_position(spec: &ConvSpec, oy: usize, ox: usize, ki: usize, kj: usize) -> (isize, isize) {
    (
        (oy * spec.stride.0 + ki * spec.dilation.0) as isize - spec.padding.0 as isize,
        (ox * spec.stride.1 + kj * spec.dilation.1) as isize - spec.padding.1 as isize,
    )
}

/// Validates all operands and returns the output shape.
pub fn deform_output_shape(
    input: Shape,
    weight: Shape,
    offsets: Shape,
    masks: Shape,
    spec: &ConvSpec,
) -> Result<Shape> {
    let out = conv2d_output_shape(input, weight, spec)?;
    let taps = weight.h * weight.w;
    let want_off = Shape::new(out.n, 2 * taps, out.h, out.w);
    let want_mask = Shape::new(out.n, taps, out.h, out.w);
    if offsets != want_off {
        return Err(config_err!(
            "offset field {offsets} does not match {want_off} required by weight {weight} on input {input}"
        ));
    }
    if masks != want_mask {
        return Err(config_err!(
            "modulation field {masks} does not match {want_mask} required by weight {weight} on input {input}"
        ));
    }
    Ok(out)
}

struct Layout {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Layout {
    fn taps(&self) -> usize {
        self.kh * self.kw
    }
    fn col_rows(&self) -> usize {
        self.c * self.taps()
    }
    fn block_rows(&self) -> usize {
        (COL_BLOCK / (self.col_rows() * self.ow).max(1)).clamp(1, self.oh.max(1))
    }

    /// Footprints for every tap and output position in rows `r0..r1`.
    fn footprints<T: Scalar>(&self, off: &[T], r0: usize, r1: usize, out: &mut Vec<Footprint<T>>) {
        out.clear();
        let plane = self.oh * self.ow;
        for ki in 0..self.kh {
            for kj in 0..self.kw {
                let tap = ki * self.kw + kj;
                let oy_ch = &off[2 * tap * plane..(2 * tap + 1) * plane];
                let ox_ch = &off[(2 * tap + 1) * plane..(2 * tap + 2) * plane];
                for oy in r0..r1 {
                    for ox in 0..self.ow {
                        let (by, bx) = base_position(&self.spec, oy, ox, ki, kj);
                        let p = oy * self.ow + ox;
                        let y = T::from_f64(by as f64) + oy_ch[p];
                        let x = T::from_f64(bx as f64) + ox_ch[p];
                        out.push(Footprint::new(self.h, self.w, y, x));
                    }
                }
            }
        }
    }

    /// Modulated samples for one image block: rows `c*K + tap`.
    fn columns<T: Scalar>(&self, img: &[T], mask: &[T], fps: &[Footprint<T>], r0: usize, cols: &mut [T]) {
        let plane = self.oh * self.ow;
        let ncols = fps.len() / self.taps();
        let hw = self.h * self.w;
        for c in 0..self.c {
            let src = &img[c * hw..(c + 1) * hw];
            for tap in 0..self.taps() {
                let row = &mut cols[(c * self.taps() + tap) * ncols..(c * self.taps() + tap + 1) * ncols];
                let m = &mask[tap * plane + r0 * self.ow..tap * plane + r0 * self.ow + ncols];
                let fp = &fps[tap * ncols..(tap + 1) * ncols];
                for ((v, f), &mv) in row.iter_mut().zip(fp).zip(m) {
                    *v = f.sample(src) * mv;
                }
            }
        }
    }
}

fn layout(input: Shape, weight: Shape, out: Shape, spec: ConvSpec) -> Layout {
    Layout { c: input.c, h: input.h, w: input.w, kh: weight.h, kw: weight.w, oh: out.h, ow: out.w, spec }
}

/// Forward pass of the modulated deformable convolution.
pub fn modulated_deform_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = deform_output_shape(input.shape(), weight.shape(), offsets.shape(), masks.shape(), spec)?;
    if let Some(b) = bias {
        if b.len() != out_shape.c {
            return Err(config_err!("bias of shape {} does not match {} output channels", b.shape(), out_shape.c));
        }
    }
    let l = layout(input.shape(), weight.shape(), out_shape, *spec);
    let kk = l.col_rows();
    let plane = l.oh * l.ow;
    let wmat = MatRef::row_major(weight.data(), out_shape.c, kk);
    let mut out = Tensor::zeros(out_shape);
    let block = l.block_rows();
    let mut cols = vec![T::ZERO; kk * block * l.ow];
    let mut fps = Vec::with_capacity(l.taps() * block * l.ow);
    let (in_item, out_item) = (input.shape().item(), out_shape.item());
    let (off_item, mask_item) = (offsets.shape().item(), masks.shape().item());
    for n in 0..out_shape.n {
        let img = &input.data()[n * in_item..(n + 1) * in_item];
        let off = &offsets.data()[n * off_item..(n + 1) * off_item];
        let mask = &masks.data()[n * mask_item..(n + 1) * mask_item];
        let dst = &mut out.data_mut()[n * out_item..(n + 1) * out_item];
        let mut r0 = 0;
        while r0 < l.oh {
            let r1 = (r0 + block).min(l.oh);
            let ncols = (r1 - r0) * l.ow;
            l.footprints(off, r0, r1, &mut fps);
            let cols = &mut cols[..kk * ncols];
            l.columns(img, mask, &fps, r0, cols);
            gemm(wmat, MatRef::row_major(&*cols, kk, ncols), T::ZERO, &mut dst[r0 * l.ow..], plane, 1);
            r0 = r1;
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[o * plane..(o + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`modulated_deform_conv2d`].
pub struct DeformGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    pub offsets: Option<Tensor<T>>,
    pub masks: Option<Tensor<T>>,
}

/// `need` selects `[input, weight, bias, offsets, masks]`.
pub fn modulated_deform_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    offsets: &Tensor<T>,
    masks: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need: [bool; 5],
) -> Result<DeformGrads<T>> {
    let out_shape = deform_output_shape(input.shape(), weight.shape(), offsets.shape(), masks.shape(), spec)?;
    if grad_out.shape() != out_shape {
        return Err(config_err!("deform gradient {} does not match output {out_shape}", grad_out.shape()));
    }
    let [need_x, need_w, need_b, need_off, need_mask] = need;
    let l = layout(input.shape(), weight.shape(), out_shape, *spec);
    let (kk, taps, oc) = (l.col_rows(), l.taps(), out_shape.c);
    let plane = l.oh * l.ow;
    let hw = l.h * l.w;
    let wmat = MatRef::row_major(weight.data(), oc, kk);

    let mut gx = need_x.then(|| Tensor::zeros(input.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need_b.then(|| Tensor::zeros(Shape::vector(oc)));
    let mut goff = need_off.then(|| Tensor::zeros(offsets.shape()));
    let mut gmask = need_mask.then(|| Tensor::zeros(masks.shape()));
    let sample_grads = need_x || need_off || need_mask;

    let block = l.block_rows();
    let mut cols = vec![T::ZERO; kk * block * l.ow];
    let mut fps = Vec::with_capacity(taps * block * l.ow);
    let (in_item, out_item) = (input.shape().item(), out_shape.item());
    let (off_item, mask_item) = (offsets.shape().item(), masks.shape().item());
    for n in 0..out_shape.n {
        let img = &input.data()[n * in_item..(n + 1) * in_item];
        let off = &offsets.data()[n * off_item..(n + 1) * off_item];
        let mask = &masks.data()[n * mask_item..(n + 1) * mask_item];
        let go = &grad_out.data()[n * out_item..(n + 1) * out_item];
        if let Some(gb) = gb.as_mut() {
            for (o, acc) in gb.data_mut().iter_mut().enumerate() {
                for &v in &go[o * plane..(o + 1) * plane] {
                    *acc += v;
                }
            }
        }
        if !(need_w || sample_grads) {
            continue;
        }
        let mut r0 = 0;
        while r0 < l.oh {
            let r1 = (r0 + block).min(l.oh);
            let ncols = (r1 - r0) * l.ow;
            let go_blk = MatRef { data: &go[r0 * l.ow..], rows: oc, cols: ncols, rs: plane, cs: 1 };
            l.footprints(off, r0, r1, &mut fps);
            let cols = &mut cols[..kk * ncols];
            if let Some(gw) = gw.as_mut() {
                l.columns(img, mask, &fps, r0, cols);
                gemm(go_blk, MatRef::row_major(&*cols, kk, ncols).t(), T::ONE, gw.data_mut(), kk, 1);
            }
            if sample_grads {
                // cols <- W^T * grad_out, the gradient of each modulated sample
                gemm(wmat.t(), go_blk, T::ZERO, cols, ncols, 1);
                for tap in 0..taps {
                    for q in 0..ncols {
                        let p = r0 * l.ow + q;
                        let fp = &fps[tap * ncols + q];
                        let m = mask[tap * plane + p];
                        let wts = fp.weights();
                        let (mut acc_m, mut acc_y, mut acc_x) = (T::ZERO, T::ZERO, T::ZERO);
                        for c in 0..l.c {
                            let gc = cols[(c * taps + tap) * ncols + q];
                            if gc == T::ZERO {
                                continue;
                            }
                            let src = &img[c * hw..(c + 1) * hw];
                            if need_mask || need_off {
                                let f = fp.corners(src);
                                if need_mask {
                                    acc_m += gc * (wts[0] * f[0] + wts[1] * f[1] + wts[2] * f[2] + wts[3] * f[3]);
                                }
                                if need_off {
                                    let (dy, dx) = coord_grad(fp, &f);
                                    acc_y += gc * dy;
                                    acc_x += gc * dx;
                                }
                            }
                            if let Some(gx) = gx.as_mut() {
                                let gplane = &mut gx.data_mut()[n * in_item + c * hw..n * in_item + (c + 1) * hw];
                                let gm = gc * m;
                                for j in 0..4 {
                                    if fp.ok[j] {
                                        gplane[fp.idx[j]] += gm * wts[j];
                                    }
                                }
                            }
                        }
                        if let Some(g) = gmask.as_mut() {
                            g.data_mut()[n * mask_item + tap * plane + p] += acc_m;
                        }
                        if let Some(g) = goff.as_mut() {
                            let d = g.data_mut();
                            d[n * off_item + 2 * tap * plane + p] += acc_y * m;
                            d[n * off_item + (2 * tap + 1) * plane + p] += acc_x * m;
                        }
                    }
                }
            }
            r0 = r1;
        }
    }
    Ok(DeformGrads { input: gx, weight: gw, bias: gb, offsets: goff, masks: gmask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::conv2d;
    use crate::testutil::{rand_tensor, rel_close};
    use proptest::prelude::*;

    /// Bilinear interpolation written out from the four-neighbour formula.
    fn bilinear_ref(x: &Tensor<f64>, n: usize, c: usize, y: f64, xx: f64) -> f64 {
        let s = x.shape();
        let y0 = y.floor();
        let x0 = xx.floor();
        let px = |yy: f64, xq: f64| -> f64 {
            if yy < 0.0 || xq < 0.0 || yy > (s.h - 1) as f64 || xq > (s.w - 1) as f64 {
                0.0
            } else {
                x.at(n, c, yy as usize, xq as usize)
            }
        };
        let (ly, lx) = (y - y0, xx - x0);
        (1.0 - ly) * (1.0 - lx) * px(y0, x0)
            + (1.0 - ly) * lx * px(y0, x0 + 1.0)
            + ly * (1.0 - lx) * px(y0 + 1.0, x0)
            + ly * lx * px(y0 + 1.0, x0 + 1.0)
    }

    /// Per-pixel evaluation of the modulated deformable convolution.
    fn deform_ref(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        off: &Tensor<f64>,
        m: &Tensor<f64>,
        s: &ConvSpec,
    ) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (oh, ow) = s.output_size(xs.h, xs.w, ws.h, ws.w).unwrap();
        Tensor::from_fn([xs.n, ws.n, oh, ow], |n, o, oy, ox| {
            let mut acc = b.data()[o];
            for c in 0..xs.c {
                for ki in 0..ws.h {
                    for kj in 0..ws.w {
                        let t = ki * ws.w + kj;
                        let py = (oy * s.stride.0 + ki * s.dilation.0) as f64 - s.padding.0 as f64
                            + off.at(n, 2 * t, oy, ox);
                        let px = (ox * s.stride.1 + kj * s.dilation.1) as f64 - s.padding.1 as f64
                            + off.at(n, 2 * t + 1, oy, ox);
                        acc += w.at(o, c, ki, kj) * bilinear_ref(x, n, c, py, px) * m.at(n, t, oy, ox);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn sample_at_grid_node_is_exact() {
        let x = rand_tensor([1, 2, 4, 5], 1, 1.0);
        for y in 0..4 {
            for xx in 0..5 {
                assert_eq!(bilinear_sample(&x, y as f64, xx as f64, 0, 1), x.at(0, 1, y, xx));
            }
        }
    }

    #[test]
    fn sample_midpoint_averages() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], alloc::vec![3.0, 8.0]).unwrap();
        assert_eq!(bilinear_sample(&x, 0.0, 0.5, 0, 0), 5.5);
    }

    #[test]
    fn sample_far_outside_is_zero() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 7.0);
        assert_eq!(bilinear_sample(&x, -5.0, -5.0, 0, 0), 0.0);
        assert_eq!(bilinear_sample(&x, 1e30, 2.0, 0, 0), 0.0);
        // half a pixel outside blends with the zero border
        assert_eq!(bilinear_sample(&x, -0.5, 1.0, 0, 0), 3.5);
    }

    #[test]
    fn sample_grad_one_sided_at_integer() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], alloc::vec![0.0, 1.0, 5.0]).unwrap();
        let (_, _, dx) = bilinear_sample_grad(&x, 0.0, 1.0, 0, 0);
        assert_eq!(dx, 4.0); // right slope
    }

    #[test]
    fn zero_offsets_unit_masks_reduce_to_conv() {
        let s = ConvSpec::same(3, 1);
        let x = rand_tensor([2, 3, 7, 6], 2, 1.0);
        let w = rand_tensor([4, 3, 3, 3], 3, 1.0);
        let b = rand_tensor(Shape::vector(4), 4, 1.0);
        let off = Tensor::zeros([2, 18, 7, 6]);
        let m = Tensor::full([2, 9, 7, 6], 1.0);
        let d = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m, &s).unwrap();
        let c = conv2d(&x, &w, Some(&b), &s).unwrap();
        assert!(d.max_abs_diff(&c) < 1e-6);
    }

    #[test]
    fn zero_masks_leave_bias() {
        let s = ConvSpec::same(3, 1);
        let x = rand_tensor::<f64>([1, 2, 5, 5], 5, 1.0);
        let w = rand_tensor([3, 2, 3, 3], 6, 1.0);
        let b = rand_tensor(Shape::vector(3), 7, 1.0);
        let off = rand_tensor([1, 18, 5, 5], 8, 2.0);
        let m = Tensor::zeros([1, 9, 5, 5]);
        let d = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m, &s).unwrap();
        let expect = Tensor::from_fn(d.shape(), |_, o, _, _| b.data()[o]);
        assert_eq!(d, expect);
    }

    #[test]
    fn half_pixel_shift_matches_direct_evaluation() {
        let s = ConvSpec::same(3, 1);
        let x = rand_tensor([1, 1, 6, 6], 9, 1.0);
        let w = rand_tensor([1, 1, 3, 3], 10, 1.0);
        let b = Tensor::zeros(Shape::vector(1));
        let off = Tensor::from_fn([1, 18, 6, 6], |_, ch, _, _| if ch % 2 == 1 { 0.5 } else { 0.0 });
        let m = Tensor::full([1, 9, 6, 6], 1.0);
        let d = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m, &s).unwrap();
        assert!(rel_close(&d, &deform_ref(&x, &w, &b, &off, &m, &s), 1e-6));
    }

    #[test]
    fn unit_shift_equals_conv_of_shifted_input() {
        let s = ConvSpec::same(3, 1);
        let x = rand_tensor([1, 2, 8, 8], 11, 1.0);
        let w = rand_tensor([2, 2, 3, 3], 12, 1.0);
        let off = Tensor::from_fn([1, 18, 8, 8], |_, ch, _, _| if ch % 2 == 1 { 1.0 } else { 0.0 });
        let m = Tensor::full([1, 9, 8, 8], 1.0);
        let d = modulated_deform_conv2d(&x, &w, None, &off, &m, &s).unwrap();
        // x shifted one pixel left, zero-filled on the right
        let shifted = Tensor::from_fn(x.shape(), |n, c, y, xx| if xx + 1 < 8 { x.at(n, c, y, xx + 1) } else { 0.0 });
        let c = conv2d(&shifted, &w, None, &s).unwrap();
        for o in 0..2 {
            for y in 1..7 {
                for xx in 1..6 {
                    assert!((d.at(0, o, y, xx) - c.at(0, o, y, xx)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_fields() {
        let s = ConvSpec::same(3, 1);
        let x = Tensor::<f64>::zeros([1, 2, 5, 5]);
        let w = Tensor::<f64>::zeros([3, 2, 3, 3]);
        let m = Tensor::<f64>::zeros([1, 9, 5, 5]);
        let bad_k = Tensor::<f64>::zeros([1, 8, 5, 5]);
        assert!(matches!(modulated_deform_conv2d(&x, &w, None, &bad_k, &m, &s), Err(crate::Error::Config(_))));
        let off = Tensor::<f64>::zeros([1, 18, 4, 5]);
        assert!(matches!(modulated_deform_conv2d(&x, &w, None, &off, &m, &s), Err(crate::Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn matches_reference_with_random_fields(seed in any::<u64>(), stride in 1usize..3, dil in 1usize..3) {
            let s = ConvSpec::new(stride, dil, dil);
            let x = rand_tensor([2, 2, 6, 5], seed, 1.0);
            let w = rand_tensor([3, 2, 3, 3], seed ^ 1, 1.0);
            let b = rand_tensor(Shape::vector(3), seed ^ 2, 1.0);
            let (oh, ow) = s.output_size(6, 5, 3, 3).unwrap();
            let off = rand_tensor([2, 18, oh, ow], seed ^ 3, 2.5);
            let m = rand_tensor::<f64>([2, 9, oh, ow], seed ^ 4, 1.0).map(|v| v.abs());
            let d = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m, &s).unwrap();
            prop_assert!(rel_close(&d, &deform_ref(&x, &w, &b, &off, &m, &s), 1e-9));
        }

        #[test]
        fn linear_in_masks(seed in any::<u64>()) {
            let s = ConvSpec::same(3, 1);
            let x = rand_tensor([1, 2, 5, 5], seed, 1.0);
            let w = rand_tensor([2, 2, 3, 3], seed ^ 1, 1.0);
            let b = rand_tensor(Shape::vector(2), seed ^ 2, 1.0);
            let off = rand_tensor([1, 18, 5, 5], seed ^ 3, 1.5);
            let m = rand_tensor::<f64>([1, 9, 5, 5], seed ^ 4, 0.5).map(|v| v.abs());
            let m2 = m.map(|v| 2.0 * v);
            let y1 = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m, &s).unwrap();
            let y2 = modulated_deform_conv2d(&x, &w, Some(&b), &off, &m2, &s).unwrap();
            let bias = Tensor::from_fn(y1.shape(), |_, o, _, _| b.data()[o]);
            let d1 = Tensor::from_vec(y1.shape(), y1.data().iter().zip(bias.data()).map(|(a, b)| 2.0 * (a - b)).collect()).unwrap();
            let d2 = Tensor::from_vec(y2.shape(), y2.data().iter().zip(bias.data()).map(|(a, b)| a - b).collect()).unwrap();
            prop_assert!(rel_close(&d1, &d2, 1e-9));
        }
    }
}
