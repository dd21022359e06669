//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in evaluation order, so node inputs
//! always precede the node itself. [`Tape::backward`] walks the tape once in
//! reverse and returns gradients for the leaves that require them.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::conv::{self, ConvSpec};
use crate::deform;
use crate::error::{config_err, usage_err, Result};
use crate::resample;
use crate::{Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Mean absolute error; the subgradient at a tie is 0.
    L1,
    /// Mean squared error.
    L2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

/// Backward rule of a [`Tape::custom`] node: maps the output gradient and the
/// input values to one optional gradient per input.
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>>>;

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    DeformConv2d { x: Var, w: Var, b: Option<Var>, offsets: Var, masks: Var, spec: ConvSpec },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: T },
    Concat { parts: Vec<Var> },
    SliceChannels { x: Var, start: usize },
    CropOrPad { x: Var, top: isize, left: isize },
    Upsample2x { x: Var },
    Sum { x: Var },
    Loss { kind: LossKind, pred: Var, target: Var },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::DeformConv2d { .. } => "deform_conv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat",
            Op::SliceChannels { .. } => "slice_channels",
            Op::CropOrPad { .. } => "crop_or_pad",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Sum { .. } => "sum",
            Op::Loss { .. } => "loss",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err!("{op} operands differ in shape: {} vs {}", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("shape preserved")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Detached leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    /// Transposed convolution with weight layout `(in_c, out_c, kh, kw)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, spec }, rg))
    }

    pub fn deform_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        offsets: Var,
        masks: Var,
        spec: ConvSpec,
    ) -> Result<Var> {
        let out = deform::modulated_deform_conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            self.value(offsets),
            self.value(masks),
            &spec,
        )?;
        let rg = self.rg(&[x, w, offsets, masks]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, Op::DeformConv2d { x, w, b, offsets, masks, spec }, rg))
    }

    /// `x` where `x >= 0`, otherwise `slope * x`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let k = T::from_f64(slope);
        let out = self.value(x).map(|v| if v >= T::ZERO { v } else { k * v });
        let rg = self.requires_grad(x);
        self.push(out, Op::LeakyRelu { x, slope: k }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::ONE / (T::ONE + (-v).exp()));
        let rg = self.requires_grad(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let out = self.value(x).map(|v| v * k);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale { x, k }, rg)
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().map(|&p| self.shape(p)).ok_or_else(|| config_err!("concat of zero tensors"))?;
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(config_err!("concat operands disagree: {s} vs {first}"));
            }
            c += s.c;
        }
        let out_shape = Shape::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..first.n {
            for &p in parts {
                let v = self.value(p);
                let item = v.shape().item();
                data.extend_from_slice(&v.data()[n * item..(n + 1) * item]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if len == 0 || start + len > s.c {
            return Err(config_err!("channel slice {start}..{} out of range for {s}", start + len));
        }
        let src = self.value(x);
        let out = Tensor::from_fn([s.n, len, s.h, s.w], |n, c, y, xx| src.at(n, start + c, y, xx));
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::SliceChannels { x, start }, rg))
    }

    /// Window of size `h x w` whose top-left corner sits at `(top, left)` in
    /// `x`; parts of the window outside `x` are zero.
    pub fn crop_or_pad(&mut self, x: Var, top: isize, left: isize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if h == 0 || w == 0 {
            return Err(config_err!("crop_or_pad to empty window {h}x{w}"));
        }
        let src = self.value(x);
        let out = Tensor::from_fn([s.n, s.c, h, w], |n, c, y, xx| {
            let (sy, sx) = (y as isize + top, xx as isize + left);
            if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                src.at(n, c, sy as usize, sx as usize)
            } else {
                T::ZERO
            }
        });
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::CropOrPad { x, top, left }, rg))
    }

    /// Bilinear 2x upsampling (half-pixel centres).
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let out = resample::upsample2x(self.value(x));
        let rg = self.requires_grad(x);
        self.push(out, Op::Upsample2x { x }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(out, Op::Sum { x }, rg)
    }

    /// Mean L1 or L2 distance between `pred` and `target`, as a scalar.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
        same_shape("loss", self.value(pred), self.value(target))?;
        let (p, t) = (self.value(pred), self.value(target));
        let mut acc = T::ZERO;
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let d = a - b;
            acc += match kind {
                LossKind::L1 => d.abs(),
                LossKind::L2 => d * d,
            };
        }
        let out = Tensor::scalar(acc / T::from_f64(p.len() as f64));
        let rg = self.rg(&[pred, target]);
        Ok(self.push(out, Op::Loss { kind, pred, target }, rg))
    }

    /// Records an externally computed value with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, rg)
    }

    /// Smallest distance from the recorded point to a non-differentiable
    /// point of any piecewise operation on the tape: leaky ReLU inputs,
    /// L1 residuals, and deformable sampling coordinates (which kink at
    /// integers). Finite-difference checks need this to exceed the step.
    pub fn min_kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    for v in self.value(*x).data() {
                        best = best.min(v.abs().to_f64());
                    }
                }
                Op::Loss { kind: LossKind::L1, pred, target } => {
                    for (a, b) in self.value(*pred).data().iter().zip(self.value(*target).data()) {
                        best = best.min((*a - *b).abs().to_f64());
                    }
                }
                Op::DeformConv2d { offsets, .. } => {
                    for v in self.value(*offsets).data() {
                        let v = v.to_f64();
                        let frac = v - libm::floor(v);
                        best = best.min(frac.min(1.0 - frac));
                    }
                }
                _ => {}
            }
        }
        best
    }

    /// Which linear piece every piecewise operation is on: signs of leaky
    /// ReLU inputs and L1 residuals, integer parts of deformable offsets.
    /// Two points with equal patterns lie on the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<i64> {
        let sign = |v: f64| if v >= 0.0 { 1 } else { -1 };
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => out.extend(self.value(*x).data().iter().map(|v| sign(v.to_f64()))),
                Op::Loss { kind: LossKind::L1, pred, target } => out.extend(
                    self.value(*pred)
                        .data()
                        .iter()
                        .zip(self.value(*target).data())
                        .map(|(a, b)| sign((*a - *b).to_f64())),
                ),
                Op::DeformConv2d { offsets, .. } => {
                    out.extend(self.value(*offsets).data().iter().map(|v| libm::floor(v.to_f64()) as i64))
                }
                _ => {}
            }
        }
        out
    }

    /// Reverse pass from a scalar node. Only leaves that require gradients
    /// appear in the result, each with the shape of its value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(usage_err!("backward needs a scalar loss, got shape {ls}"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(ls, T::ONE));
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaves[i] = Some(g);
                continue;
            }
            for (input, gin) in self.node_backward(node, &g)? {
                if !self.requires_grad(input) {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign_slice(gin.data()),
                    slot => *slot = Some(gin),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        let rg = |v: Var| self.requires_grad(v);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let need = [rg(*x), rg(*w), b.is_some_and(rg)];
                let gr = conv::conv2d_backward(self.value(*x), self.value(*w), spec, g, need)?;
                push_opt(&mut out, *x, gr.input);
                push_opt(&mut out, *w, gr.weight);
                if let Some(b) = b {
                    push_opt(&mut out, *b, gr.bias);
                }
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let need = [rg(*x), rg(*w), b.is_some_and(rg)];
                let gr = conv::conv_transpose2d_backward(self.value(*x), self.value(*w), spec, g, need)?;
                push_opt(&mut out, *x, gr.input);
                push_opt(&mut out, *w, gr.weight);
                if let Some(b) = b {
                    push_opt(&mut out, *b, gr.bias);
                }
            }
            Op::DeformConv2d { x, w, b, offsets, masks, spec } => {
                let need = [rg(*x), rg(*w), b.is_some_and(rg), rg(*offsets), rg(*masks)];
                let gr = deform::modulated_deform_conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*offsets),
                    self.value(*masks),
                    spec,
                    g,
                    need,
                )?;
                push_opt(&mut out, *x, gr.input);
                push_opt(&mut out, *w, gr.weight);
                if let Some(b) = b {
                    push_opt(&mut out, *b, gr.bias);
                }
                push_opt(&mut out, *offsets, gr.offsets);
                push_opt(&mut out, *masks, gr.masks);
            }
            Op::LeakyRelu { x, slope } => {
                let k = *slope;
                out.push((*x, zip_map(g, self.value(*x), |gv, xv| if xv >= T::ZERO { gv } else { gv * k })));
            }
            Op::Sigmoid { x } => {
                out.push((*x, zip_map(g, &node.value, |gv, y| gv * y * (T::ONE - y))));
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul { a, b } => {
                if rg(*a) {
                    out.push((*a, zip_map(g, self.value(*b), |gv, bv| gv * bv)));
                }
                if rg(*b) {
                    out.push((*b, zip_map(g, self.value(*a), |gv, av| gv * av)));
                }
            }
            Op::Scale { x, k } => {
                let k = *k;
                out.push((*x, g.map(|v| v * k)));
            }
            Op::Concat { parts } => {
                let gs = g.shape();
                let mut c0 = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    if rg(p) {
                        out.push((p, Tensor::from_fn(ps, |n, c, y, x| g.at(n, c0 + c, y, x))));
                    }
                    c0 += ps.c;
                }
                debug_assert_eq!(c0, gs.c);
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let (start, len) = (*start, g.shape().c);
                out.push((
                    *x,
                    Tensor::from_fn(xs, |n, c, y, xx| {
                        if c >= start && c < start + len {
                            g.at(n, c - start, y, xx)
                        } else {
                            T::ZERO
                        }
                    }),
                ));
            }
            Op::CropOrPad { x, top, left } => {
                let xs = self.shape(*x);
                let gs = g.shape();
                out.push((
                    *x,
                    Tensor::from_fn(xs, |n, c, y, xx| {
                        let (wy, wx) = (y as isize - top, xx as isize - left);
                        if wy >= 0 && wx >= 0 && (wy as usize) < gs.h && (wx as usize) < gs.w {
                            g.at(n, c, wy as usize, wx as usize)
                        } else {
                            T::ZERO
                        }
                    }),
                ));
            }
            Op::Upsample2x { x } => {
                out.push((*x, resample::upsample2x_backward(self.shape(*x), g)));
            }
            Op::Sum { x } => {
                out.push((*x, Tensor::full(self.shape(*x), g.data()[0])));
            }
            Op::Loss { kind, pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g.data()[0] / T::from_f64(p.len() as f64);
                let gp = match kind {
                    LossKind::L2 => zip_map(p, t, |a, b| T::from_f64(2.0) * (a - b) * scale),
                    LossKind::L1 => zip_map(p, t, |a, b| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::ZERO
                        }
                    }),
                };
                if rg(*target) {
                    out.push((*target, gp.map(|v| -v)));
                }
                out.push((*pred, gp));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = backward(g, &values);
                if gs.len() != inputs.len() {
                    return Err(usage_err!(
                        "custom backward returned {} gradients for {} inputs",
                        gs.len(),
                        inputs.len()
                    ));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        if gv.shape() != self.shape(v) {
                            return Err(usage_err!(
                                "custom backward gradient {} does not match input {}",
                                gv.shape(),
                                self.shape(v)
                            ));
                        }
                        out.push((v, gv));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn push_opt<T>(out: &mut Vec<(Var, Tensor<T>)>, v: Var, g: Option<Tensor<T>>) {
    if let Some(g) = g {
        out.push((v, g));
    }
}
