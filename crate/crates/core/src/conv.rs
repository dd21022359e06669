//! Standard and transposed 2-D convolution kernels.
//!
//! Both directions lower to im2col + GEMM. Column buffers are built over
//! blocks of output rows so peak memory stays bounded on large images.
//! Reductions run in a fixed order (batch, then row block, then GEMM), which
//! keeps every result bit-reproducible.

use alloc::vec;

use crate::error::{config_err, Result};
use crate::scalar::{gemm, MatRef};
use crate::{Scalar, Shape, Tensor};

/// Upper bound on the number of elements in one column block.
const COL_BLOCK: usize = 1 << 21;

/// Stride, zero padding and dilation of a convolution, per axis `(y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: (1, 1), padding: (0, 0), dilation: (1, 1) }
    }
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvSpec { stride: (stride, stride), padding: (padding, padding), dilation: (dilation, dilation) }
    }

    /// Stride 1 with "same" zero padding for an odd kernel and dilation.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec::new(1, dilation * (kernel / 2), dilation)
    }

    /// `floor((len + 2p - d(k-1) - 1) / s) + 1` per axis, or `None` if empty.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        fn axis(len: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
            if s == 0 || d == 0 || k == 0 {
                return None;
            }
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            (padded >= span).then(|| (padded - span) / s + 1)
        }
        Some((
            axis(h, kh, self.stride.0, self.padding.0, self.dilation.0)?,
            axis(w, kw, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }

    /// Output extent of the transposed convolution, or `None` if empty.
    pub fn transpose_output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        fn axis(len: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
            if s == 0 || d == 0 || k == 0 || len == 0 {
                return None;
            }
            let full = (len - 1) * s + d * (k - 1) + 1;
            (full > 2 * p).then(|| full - 2 * p)
        }
        Some((
            axis(h, kh, self.stride.0, self.padding.0, self.dilation.0)?,
            axis(w, kw, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }
}

/// Sampling geometry linking an image `(c, h, w)` to an output grid `(oh, ow)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: ConvSpec,
}

impl Geom {
    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.taps()
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Output rows per column block.
    pub fn block_rows(&self) -> usize {
        (COL_BLOCK / (self.col_rows() * self.ow).max(1)).clamp(1, self.oh.max(1))
    }

    #[inline]
    fn src(&self, o: usize, k: usize, axis: usize) -> isize {
        let (s, p, d) = if axis == 0 {
            (self.spec.stride.0, self.spec.padding.0, self.spec.dilation.0)
        } else {
            (self.spec.stride.1, self.spec.padding.1, self.spec.dilation.1)
        };
        (o * s + k * d) as isize - p as isize
    }
}

/// Fills `cols` (`c*kh*kw` rows by `(r1-r0)*ow` columns) from one image.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &Geom, r0: usize, r1: usize, cols: &mut [T]) {
    let ncols = (r1 - r0) * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for (ry, oy) in (r0..r1).enumerate() {
                    let iy = g.src(oy, ki, 0);
                    let out = &mut dst[ry * g.ow..(ry + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = g.src(ox, kj, 1);
                        *v = if ix < 0 || ix >= g.w as isize { T::ZERO } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `img`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &Geom, r0: usize, r1: usize, img: &mut [T]) {
    let ncols = (r1 - r0) * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * ncols..(row + 1) * ncols];
                for (ry, oy) in (r0..r1).enumerate() {
                    let iy = g.src(oy, ki, 0);
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[ry * g.ow..(ry + 1) * g.ow].iter().enumerate() {
                        let ix = g.src(ox, kj, 1);
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, out_c: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != out_c => {
            Err(config_err!("bias of shape {} does not match {out_c} output channels", b.shape()))
        }
        _ => Ok(()),
    }
}

/// Validates a convolution and returns its output shape.
pub fn conv2d_output_shape(input: Shape, weight: Shape, spec: &ConvSpec) -> Result<Shape> {
    if input.c != weight.c {
        return Err(config_err!(
            "conv2d input {input} has {} channels but weight {weight} expects {}",
            input.c,
            weight.c
        ));
    }
    let (oh, ow) = spec
        .output_size(input.h, input.w, weight.h, weight.w)
        .ok_or_else(|| config_err!("conv2d of input {input} with weight {weight} and {spec:?} has empty output"))?;
    Ok(Shape::new(input.n, weight.n, oh, ow))
}

/// Validates a transposed convolution (weight layout `(in_c, out_c, kh, kw)`).
pub fn conv_transpose2d_output_shape(input: Shape, weight: Shape, spec: &ConvSpec) -> Result<Shape> {
    if input.c != weight.n {
        return Err(config_err!(
            "conv_transpose2d input {input} has {} channels but weight {weight} expects {}",
            input.c,
            weight.n
        ));
    }
    let (oh, ow) = spec.transpose_output_size(input.h, input.w, weight.h, weight.w).ok_or_else(|| {
        config_err!("conv_transpose2d of input {input} with weight {weight} and {spec:?} has empty output")
    })?;
    Ok(Shape::new(input.n, weight.c, oh, ow))
}

fn conv_geom(input: Shape, weight: Shape, out: Shape, spec: ConvSpec) -> Geom {
    Geom { c: input.c, h: input.h, w: input.w, kh: weight.h, kw: weight.w, oh: out.h, ow: out.w, spec }
}

/// `y[o, p] = sum_{c, i} w[o, c, i] * x[c, p_i] + b[o]` with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = conv2d_output_shape(input.shape(), weight.shape(), spec)?;
    check_bias(bias, out_shape.c)?;
    let g = conv_geom(input.shape(), weight.shape(), out_shape, *spec);
    let wmat = MatRef::row_major(weight.data(), out_shape.c, g.col_rows());
    let mut out = Tensor::zeros(out_shape);
    let block = g.block_rows();
    let mut cols = vec![T::ZERO; g.col_rows() * block * g.ow];
    let in_item = input.shape().item();
    let out_item = out_shape.item();
    let plane = g.out_plane();
    for n in 0..out_shape.n {
        let img = &input.data()[n * in_item..(n + 1) * in_item];
        let dst = &mut out.data_mut()[n * out_item..(n + 1) * out_item];
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + block).min(g.oh);
            let ncols = (r1 - r0) * g.ow;
            let cols = &mut cols[..g.col_rows() * ncols];
            im2col(img, &g, r0, r1, cols);
            let b = MatRef::row_major(&*cols, g.col_rows(), ncols);
            gemm(wmat, b, T::ZERO, &mut dst[r0 * g.ow..], plane, 1);
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

/// Gradients of [`conv2d`]; each requested part is `Some`.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let out_shape = conv2d_output_shape(input.shape(), weight.shape(), spec)?;
    if grad_out.shape() != out_shape {
        return Err(config_err!("conv2d gradient {} does not match output {out_shape}", grad_out.shape()));
    }
    let g = conv_geom(input.shape(), weight.shape(), out_shape, *spec);
    let [need_x, need_w, need_b] = need;
    let kk = g.col_rows();
    let oc = out_shape.c;
    let plane = g.out_plane();
    let wmat = MatRef::row_major(weight.data(), oc, kk);
    let mut gx = need_x.then(|| Tensor::zeros(input.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need_b.then(|| Tensor::zeros(Shape::vector(oc)));
    let block = g.block_rows();
    let mut cols = vec![T::ZERO; kk * block * g.ow];
    let in_item = input.shape().item();
    let out_item = out_shape.item();
    for n in 0..out_shape.n {
        let img = &input.data()[n * in_item..(n + 1) * in_item];
        let go = &grad_out.data()[n * out_item..(n + 1) * out_item];
        if let Some(gb) = gb.as_mut() {
            for (o, acc) in gb.data_mut().iter_mut().enumerate() {
                for &v in &go[o * plane..(o + 1) * plane] {
                    *acc += v;
                }
            }
        }
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + block).min(g.oh);
            let ncols = (r1 - r0) * g.ow;
            let go_blk = MatRef { data: &go[r0 * g.ow..], rows: oc, cols: ncols, rs: plane, cs: 1 };
            let cols = &mut cols[..kk * ncols];
            if let Some(gw) = gw.as_mut() {
                im2col(img, &g, r0, r1, cols);
                let colt = MatRef::row_major(&*cols, kk, ncols).t();
                gemm(go_blk, colt, T::ONE, gw.data_mut(), kk, 1);
            }
            if let Some(gx) = gx.as_mut() {
                gemm(wmat.t(), go_blk, T::ZERO, cols, ncols, 1);
                col2im(cols, &g, r0, r1, &mut gx.data_mut()[n * in_item..(n + 1) * in_item]);
            }
            r0 = r1;
        }
    }
    Ok(ConvGrads { input: gx, weight: gw, bias: gb })
}

/// Transposed convolution, the adjoint of [`conv2d`] with respect to its
/// input. The weight layout is `(in_c, out_c, kh, kw)`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = conv_transpose2d_output_shape(input.shape(), weight.shape(), spec)?;
    check_bias(bias, out_shape.c)?;
    let ishape = input.shape();
    // the output image is sampled onto the input grid
    let g = Geom {
        c: out_shape.c,
        h: out_shape.h,
        w: out_shape.w,
        kh: weight.shape().h,
        kw: weight.shape().w,
        oh: ishape.h,
        ow: ishape.w,
        spec: *spec,
    };
    let kk = g.col_rows();
    let wmat = MatRef::row_major(weight.data(), ishape.c, kk);
    let mut out = Tensor::zeros(out_shape);
    let block = g.block_rows();
    let mut cols = vec![T::ZERO; kk * block * g.ow];
    let in_plane = ishape.plane();
    let (in_item, out_item) = (ishape.item(), out_shape.item());
    for n in 0..ishape.n {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let dst = &mut out.data_mut()[n * out_item..(n + 1) * out_item];
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + block).min(g.oh);
            let ncols = (r1 - r0) * g.ow;
            let xb = MatRef { data: &x[r0 * g.ow..], rows: ishape.c, cols: ncols, rs: in_plane, cs: 1 };
            let cols = &mut cols[..kk * ncols];
            gemm(wmat.t(), xb, T::ZERO, cols, ncols, 1);
            col2im(cols, &g, r0, r1, dst);
            r0 = r1;
        }
        if let Some(bias) = bias {
            let plane = out_shape.plane();
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[o * plane..(o + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let out_shape = conv_transpose2d_output_shape(input.shape(), weight.shape(), spec)?;
    if grad_out.shape() != out_shape {
        return Err(config_err!("conv_transpose2d gradient {} does not match output {out_shape}", grad_out.shape()));
    }
    let ishape = input.shape();
    let g = Geom {
        c: out_shape.c,
        h: out_shape.h,
        w: out_shape.w,
        kh: weight.shape().h,
        kw: weight.shape().w,
        oh: ishape.h,
        ow: ishape.w,
        spec: *spec,
    };
    let [need_x, need_w, need_b] = need;
    let kk = g.col_rows();
    let wmat = MatRef::row_major(weight.data(), ishape.c, kk);
    let mut gx = need_x.then(|| Tensor::zeros(ishape));
    let mut gw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut gb = need_b.then(|| Tensor::zeros(Shape::vector(out_shape.c)));
    let block = g.block_rows();
    let mut cols = vec![T::ZERO; kk * block * g.ow];
    let in_plane = ishape.plane();
    let (in_item, out_item) = (ishape.item(), out_shape.item());
    for n in 0..ishape.n {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let gy = &grad_out.data()[n * out_item..(n + 1) * out_item];
        if let Some(gb) = gb.as_mut() {
            let plane = out_shape.plane();
            for (o, acc) in gb.data_mut().iter_mut().enumerate() {
                for &v in &gy[o * plane..(o + 1) * plane] {
                    *acc += v;
                }
            }
        }
        if !(need_x || need_w) {
            continue;
        }
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + block).min(g.oh);
            let ncols = (r1 - r0) * g.ow;
            let cols = &mut cols[..kk * ncols];
            im2col(gy, &g, r0, r1, cols);
            let cm = MatRef::row_major(&*cols, kk, ncols);
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx.data_mut()[n * in_item + r0 * g.ow..];
                gemm(wmat, cm, T::ZERO, dst, in_plane, 1);
            }
            if let Some(gw) = gw.as_mut() {
                let xb = MatRef { data: &x[r0 * g.ow..], rows: ishape.c, cols: ncols, rs: in_plane, cs: 1 };
                gemm(xb, cm.t(), T::ONE, gw.data_mut(), kk, 1);
            }
            r0 = r1;
        }
    }
    Ok(ConvGrads { input: gx, weight: gw, bias: gb })
}
