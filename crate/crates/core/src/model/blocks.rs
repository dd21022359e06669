use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::random::Rng;
use crate::{ConvSpec, Scalar, Shape, Tape, Tensor, Var};

/// How a convolution layer combines its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    /// Weight layout `(in_c, out_c, kh, kw)`.
    Transposed,
    /// Modulated deformable; stride 1, dilation 1.
    Deformable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    HeUniform,
    Zeros,
}

/// Weight and bias of one convolution, plus where it runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub spec: ConvSpec,
    /// Scale index of the input feature map.
    pub in_scale: usize,
    /// Scale index of the output feature map.
    pub out_scale: usize,
    pub(crate) init: Init,
}

impl ConvLayer {
    pub fn weight_shape(&self) -> Shape {
        match self.kind {
            ConvKind::Transposed => Shape::new(self.in_c, self.out_c, self.kernel, self.kernel),
            _ => Shape::new(self.out_c, self.in_c, self.kernel, self.kernel),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_c
    }

    /// Fan-in used by He-uniform initialization.
    pub fn fan_in(&self) -> usize {
        let taps = self.kernel * self.kernel;
        match self.kind {
            ConvKind::Transposed => (self.in_c * taps / (self.spec.stride.0 * self.spec.stride.1)).max(1),
            _ => self.in_c * taps,
        }
    }

    /// Multiply-accumulates on an input of `h × w` full-resolution pixels:
    /// `(kernel MACs, sampling MACs)`.
    pub fn macs(&self, h: usize, w: usize) -> (u64, u64) {
        let taps = (self.kernel * self.kernel) as u64;
        let (ih, iw) = ((h >> self.in_scale) as u64, (w >> self.in_scale) as u64);
        let (oh, ow) = ((h >> self.out_scale) as u64, (w >> self.out_scale) as u64);
        let (ci, co) = (self.in_c as u64, self.out_c as u64);
        match self.kind {
            ConvKind::Standard => (oh * ow * taps * ci * co, 0),
            ConvKind::Transposed => (ih * iw * taps * ci * co, 0),
            // Each sampled value costs four bilinear products plus one
            // modulation product.
            ConvKind::Deformable => (oh * ow * taps * ci * co, oh * ow * taps * ci * 5),
        }
    }

    pub(crate) fn init_into<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<()> {
        let shape = self.weight_shape();
        let weight = match self.init {
            Init::Zeros => Tensor::zeros(shape),
            Init::HeUniform => {
                let bound = libm::sqrt(6.0 / self.fan_in() as f64);
                rng.uniform_tensor(shape, -bound, bound)
            }
        };
        let w = store.push(format!("{}.weight", self.name), weight)?;
        let b = store.push(format!("{}.bias", self.name), Tensor::zeros(Shape::vector(self.out_c)))?;
        if (w, b) != (self.weight, self.bias) {
            return Err(config_err!("parameter order of {} does not match the layout", self.name));
        }
        Ok(())
    }

    /// Standard or transposed convolution.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (p[self.weight.0], p[self.bias.0]);
        match self.kind {
            ConvKind::Standard => tape.conv2d(x, w, Some(b), self.spec),
            ConvKind::Transposed => tape.conv_transpose2d(x, w, Some(b), self.spec),
            ConvKind::Deformable => Err(config_err!("{} needs offsets and masks", self.name)),
        }
    }

    pub fn forward_deform<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        offsets: Var,
        masks: Var,
    ) -> Result<Var> {
        tape.deform_conv2d(x, p[self.weight.0], Some(p[self.bias.0]), offsets, masks, self.spec)
    }
}

/// Allocates parameter ids in creation order.
#[derive(Default)]
pub(crate) struct Layout {
    pub layers: Vec<ConvLayer>,
    next: usize,
}

impl Layout {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: String,
        kind: ConvKind,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        spec: ConvSpec,
        scales: (usize, usize),
        init: Init,
    ) -> ConvLayer {
        let layer = ConvLayer {
            name,
            kind,
            weight: ParamId(self.next),
            bias: ParamId(self.next + 1),
            in_c,
            out_c,
            kernel,
            spec,
            in_scale: scales.0,
            out_scale: scales.1,
            init,
        };
        self.next += 2;
        self.layers.push(layer.clone());
        layer
    }

    /// Stride-1 "same" convolution at one scale.
    pub fn same(&mut self, name: String, in_c: usize, out_c: usize, kernel: usize, scale: usize) -> ConvLayer {
        let spec = ConvSpec::same(kernel, 1);
        self.conv(name, ConvKind::Standard, in_c, out_c, kernel, spec, (scale, scale), Init::HeUniform)
    }
}

/// conv3×3 → leaky ReLU → conv3×3, plus identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ResBlock {
    pub(crate) fn new(l: &mut Layout, name: &str, c: usize, k: usize, scale: usize) -> Self {
        ResBlock {
            conv1: l.same(format!("{name}.conv1"), c, c, k, scale),
            conv2: l.same(format!("{name}.conv2"), c, c, k, scale),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, slope: f64) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, slope);
        let h = self.conv2.forward(tape, p, h)?;
        tape.add(h, x)
    }
}

/// Modulated deformable conv → leaky ReLU → conv3×3, plus identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Rsab {
    pub dcn: ConvLayer,
    pub conv: ConvLayer,
}

impl Rsab {
    pub(crate) fn new(l: &mut Layout, name: &str, c: usize, k: usize, scale: usize) -> Self {
        let dcn = l.conv(
            format!("{name}.dcn"),
            ConvKind::Deformable,
            c,
            c,
            k,
            ConvSpec::same(k, 1),
            (scale, scale),
            Init::HeUniform,
        );
        Rsab { dcn, conv: l.same(format!("{name}.conv"), c, c, k, scale) }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        offsets: Var,
        masks: Var,
        slope: f64,
    ) -> Result<Var> {
        let h = self.dcn.forward_deform(tape, p, x, offsets, masks)?;
        let h = tape.leaky_relu(h, slope);
        let h = self.conv.forward(tape, p, h)?;
        tape.add(h, x)
    }
}

/// Offsets and modulation masks shared by the deformable layers of a scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OffsetFields {
    /// `(n, 2K, h, w)`, `(dy, dx)` pairs per kernel tap.
    pub offsets: Var,
    /// `(n, K, h, w)` in `[0, 1]`.
    pub masks: Var,
}

/// Doubles the resolution of both fields and the offset values.
pub fn upsample_offsets<T: Scalar>(tape: &mut Tape<T>, fields: OffsetFields) -> OffsetFields {
    let up = tape.upsample2x(fields.offsets);
    OffsetFields { offsets: tape.scale(up, 2.0), masks: tape.upsample2x(fields.masks) }
}

/// Predicts a scale's offsets and masks from its features and, except at
/// the coarsest scale, the upsampled fields of the next coarser scale.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetHead {
    pub feat: ConvLayer,
    pub out: ConvLayer,
    pub taps: usize,
    pub has_prev: bool,
}

impl OffsetHead {
    pub(crate) fn new(
        l: &mut Layout,
        name: &str,
        c: usize,
        hidden: usize,
        k: usize,
        scale: usize,
        has_prev: bool,
    ) -> Self {
        let taps = k * k;
        let feat = l.same(format!("{name}.feat"), c, hidden, k, scale);
        let in_c = hidden + if has_prev { 3 * taps } else { 0 };
        let spec = ConvSpec::same(k, 1);
        let out =
            l.conv(format!("{name}.out"), ConvKind::Standard, in_c, 3 * taps, k, spec, (scale, scale), Init::Zeros);
        OffsetHead { feat, out, taps, has_prev }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        prev: Option<OffsetFields>,
        slope: f64,
    ) -> Result<OffsetFields> {
        let h = self.feat.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, slope);
        let h = match (prev, self.has_prev) {
            (Some(prev), true) => {
                let up = upsample_offsets(tape, prev);
                tape.concat(&[h, up.offsets, up.masks])?
            }
            (None, false) => h,
            (Some(_), false) => return Err(config_err!("{} takes no coarser offsets", self.out.name)),
            (None, true) => return Err(config_err!("{} requires coarser offsets", self.out.name)),
        };
        let raw = self.out.forward(tape, p, h)?;
        let offsets = tape.slice_channels(raw, 0, 2 * self.taps)?;
        let logits = tape.slice_channels(raw, 2 * self.taps, self.taps)?;
        Ok(OffsetFields { offsets, masks: tape.sigmoid(logits) })
    }
}

/// 1×1 compression, parallel dilated 3×3 branches, concat, 1×1 fusion,
/// plus identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextBlock {
    pub compress: ConvLayer,
    pub branches: Vec<ConvLayer>,
    pub fuse: ConvLayer,
}

impl ContextBlock {
    pub(crate) fn new(
        l: &mut Layout,
        c: usize,
        ratio: usize,
        dilations: &[usize],
        k: usize,
        scale: usize,
    ) -> Result<Self> {
        if ratio == 0 || !c.is_multiple_of(ratio) {
            return Err(config_err!("context compression {ratio} does not divide {c} channels"));
        }
        let inner = c / ratio;
        let compress = l.same(String::from("context.compress"), c, inner, 1, scale);
        let branches = dilations
            .iter()
            .enumerate()
            .map(|(j, &d)| {
                let spec = ConvSpec::same(k, d);
                let name = format!("context.branch{j}");
                l.conv(name, ConvKind::Standard, inner, inner, k, spec, (scale, scale), Init::HeUniform)
            })
            .collect();
        let fuse = l.same(String::from("context.fuse"), inner * dilations.len(), c, 1, scale);
        Ok(ContextBlock { compress, branches, fuse })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let z = self.compress.forward(tape, p, x)?;
        let parts = self.branches.iter().map(|b| b.forward(tape, p, z)).collect::<Result<Vec<_>>>()?;
        let cat = tape.concat(&parts)?;
        let fused = self.fuse.forward(tape, p, cat)?;
        tape.add(fused, x)
    }
}
