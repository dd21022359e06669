//! Finite-difference verification of reverse-mode gradients.
//!
//! Every element of every input is perturbed by `±h` and the central
//! difference `(f(x+h) - f(x-h)) / 2h` compared with the analytic gradient
//! in double precision. An element passes when
//! `|a - n| / max(|a|, |n|, abs_floor) < rel_tol`, so values near zero are
//! judged against the absolute floor.
//!
//! Piecewise-linear operations (leaky ReLU, L1, bilinear sampling) make the
//! central difference meaningless when `x ± h` straddles a kink. The kink
//! pattern of both evaluations is compared with the base point; when it
//! differs the step is divided by ten (at most three times) and the element
//! is counted as refined.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{usage_err, Error, Result};
use crate::model::{upsample_offsets, ModelConfig, OffsetFields, Sadnet};
use crate::params::ParamId;
use crate::random::Rng;
use crate::{ConvSpec, LossKind, Shape, Tape, Tensor, Var};

/// Tolerances and step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-3, rel_tol: 1e-4, abs_floor: 1e-6 }
    }
}

/// Builds a scalar from the input leaves.
pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One differentiable function with its evaluation point.
pub struct GradCase {
    pub name: String,
    /// Operation under test, reported on failure.
    pub op: &'static str,
    pub inputs: Vec<(String, Tensor<f64>)>,
    build: Build,
}

/// Worst agreement over one input of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub case: String,
    pub op: &'static str,
    pub group: String,
    pub elements: usize,
    pub refined: usize,
    /// Largest `|a - n| / max(|a|, |n|, abs_floor)`.
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub passed: bool,
}

/// Results of a suite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub results: Vec<GroupResult>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    pub fn worst_rel(&self) -> f64 {
        self.results.iter().map(|r| r.worst_rel).fold(0.0, f64::max)
    }

    /// One tab-separated line per group.
    pub fn to_text(&self) -> String {
        let mut out = String::from("status\top\tcase\tgroup\telements\trefined\tworst_rel\tworst_abs\n");
        for r in &self.results {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3e}\t{:.3e}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.op,
                r.case,
                r.group,
                r.elements,
                r.refined,
                r.worst_rel,
                r.worst_abs
            ));
        }
        out
    }
}

struct Eval {
    value: f64,
    pattern: Vec<i64>,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        op: &'static str,
        inputs: Vec<(String, Tensor<f64>)>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        GradCase { name: name.into(), op, inputs, build: Box::new(build) }
    }

    fn record(&self, inputs: &[Tensor<f64>], requires_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect();
        let out = (self.build)(&mut tape, &vars)?;
        if tape.shape(out).numel() != 1 {
            return Err(usage_err!("case {} does not produce a scalar", self.name));
        }
        Ok((tape, vars, out))
    }

    fn eval(&self, inputs: &[Tensor<f64>]) -> Result<Eval> {
        let (tape, _, out) = self.record(inputs, false)?;
        Ok(Eval { value: tape.value(out).data()[0], pattern: tape.kink_pattern() })
    }

    /// Smallest distance to a kink at the evaluation point.
    pub fn kink_margin(&self) -> Result<f64> {
        let inputs: Vec<_> = self.inputs.iter().map(|(_, t)| t.clone()).collect();
        Ok(self.record(&inputs, false)?.0.min_kink_distance())
    }

    /// Compares analytic and numeric gradients of every input element.
    pub fn run(&self, cfg: &GradCheckConfig) -> Result<Vec<GroupResult>> {
        let mut inputs: Vec<_> = self.inputs.iter().map(|(_, t)| t.clone()).collect();
        let (tape, vars, out) = self.record(&inputs, true)?;
        let base = tape.kink_pattern();
        let grads = tape.backward(out)?;
        let mut results = Vec::new();
        for (i, (group, _)) in self.inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
            let mut r = GroupResult {
                case: self.name.clone(),
                op: self.op,
                group: group.clone(),
                elements: inputs[i].len(),
                refined: 0,
                worst_rel: 0.0,
                worst_abs: 0.0,
                passed: true,
            };
            for j in 0..inputs[i].len() {
                let orig = inputs[i].data()[j];
                let mut h = cfg.h;
                let mut numeric = None;
                for attempt in 0..4 {
                    inputs[i].data_mut()[j] = orig + h;
                    let plus = self.eval(&inputs)?;
                    inputs[i].data_mut()[j] = orig - h;
                    let minus = self.eval(&inputs)?;
                    inputs[i].data_mut()[j] = orig;
                    if plus.pattern == base && minus.pattern == base {
                        numeric = Some((plus.value - minus.value) / (2.0 * h));
                        if attempt > 0 {
                            r.refined += 1;
                        }
                        break;
                    }
                    h /= 10.0;
                }
                let Some(n) = numeric else {
                    return Err(Error::Numeric(format!("{}: element {j} of {group} sits on a kink", self.name)));
                };
                let a = analytic.data()[j];
                let abs = (a - n).abs();
                let rel = abs / a.abs().max(n.abs()).max(cfg.abs_floor);
                r.worst_abs = r.worst_abs.max(abs);
                r.worst_rel = r.worst_rel.max(rel);
                if !(rel < cfg.rel_tol) {
                    r.passed = false;
                }
            }
            results.push(r);
        }
        Ok(results)
    }
}

/// Runs every case and collects the results.
pub fn run_suite(cases: &[GradCase], cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut report = GradReport::default();
    for case in cases {
        report.results.extend(case.run(cfg)?);
    }
    Ok(report)
}

fn rand(shape: Shape, rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    rng.uniform_tensor(shape, lo, hi)
}

/// Uniform magnitude in `[lo, hi]` with a random sign.
fn away_from_zero(shape: Shape, rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.uniform_range(lo, hi);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// Offsets with fractional parts in `[0.3, 0.7]`.
fn fractional_offsets(shape: Shape, rng: &mut Rng, max_int: i64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let whole = rng.below((2 * max_int + 1) as u64) as i64 - max_int;
        whole as f64 + rng.uniform_range(0.3, 0.7)
    })
}

fn named(pairs: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    pairs.into_iter().map(|(n, t)| (String::from(n), t)).collect()
}

/// `sum(y * r)` for a fixed random `r`, so every output element matters
/// with a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = Rng::new(seed).uniform_tensor(tape.shape(y), -1.0, 1.0);
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

fn pointwise_case(
    name: &'static str,
    inputs: Vec<(String, Tensor<f64>)>,
    f: fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> GradCase {
    GradCase::new(name, name, inputs, move |t, v| {
        let y = f(t, v)?;
        project(t, y, 99)
    })
}

/// Every tensor operation on small double-precision inputs.
pub fn ops_suite(seed: u64) -> Vec<GradCase> {
    let mut rng = Rng::new(seed);
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let mut cases = Vec::new();

    for (name, spec, xs, ws) in [
        ("conv2d_pad1", ConvSpec::new(1, 1, 1), s(2, 3, 6, 6), s(4, 3, 3, 3)),
        ("conv2d_stride2_dil2", ConvSpec::new(2, 2, 2), s(2, 2, 6, 6), s(3, 2, 3, 3)),
    ] {
        let inputs = named(vec![
            ("input", rand(xs, &mut rng, -1.0, 1.0)),
            ("weight", rand(ws, &mut rng, -0.5, 0.5)),
            ("bias", rand(Shape::vector(ws.n), &mut rng, -0.5, 0.5)),
        ]);
        cases.push(GradCase::new(name, "conv2d", inputs, move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
            project(t, y, 1)
        }));
    }
    let inputs = named(vec![
        ("input", rand(s(2, 4, 3, 3), &mut rng, -1.0, 1.0)),
        ("weight", rand(s(4, 3, 2, 2), &mut rng, -0.5, 0.5)),
        ("bias", rand(Shape::vector(3), &mut rng, -0.5, 0.5)),
    ]);
    cases.push(GradCase::new("conv_transpose2d_s2", "conv_transpose2d", inputs, |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), ConvSpec::new(2, 0, 1))?;
        project(t, y, 2)
    }));
    let inputs = named(vec![
        ("input", rand(s(2, 3, 6, 6), &mut rng, -1.0, 1.0)),
        ("weight", rand(s(4, 3, 3, 3), &mut rng, -0.5, 0.5)),
        ("bias", rand(Shape::vector(4), &mut rng, -0.5, 0.5)),
        ("offsets", fractional_offsets(s(2, 18, 6, 6), &mut rng, 1)),
        ("masks", rand(s(2, 9, 6, 6), &mut rng, 0.05, 0.95)),
    ]);
    cases.push(GradCase::new("deform_conv2d", "deform_conv2d", inputs, |t, v| {
        let y = t.deform_conv2d(v[0], v[1], Some(v[2]), v[3], v[4], ConvSpec::same(3, 1))?;
        project(t, y, 3)
    }));

    let x = |rng: &mut Rng| named(vec![("x", away_from_zero(s(2, 3, 4, 5), rng, 0.1, 1.0))]);
    cases.push(pointwise_case("leaky_relu", x(&mut rng), |t, v| Ok(t.leaky_relu(v[0], 0.2))));
    cases.push(pointwise_case("sigmoid", x(&mut rng), |t, v| Ok(t.sigmoid(v[0]))));
    cases.push(pointwise_case("scale", x(&mut rng), |t, v| Ok(t.scale(v[0], -1.5))));
    cases.push(pointwise_case("upsample2x", x(&mut rng), |t, v| Ok(t.upsample2x(v[0]))));
    cases.push(pointwise_case("slice_channels", x(&mut rng), |t, v| t.slice_channels(v[0], 1, 2)));
    cases.push(pointwise_case("crop_or_pad", x(&mut rng), |t, v| t.crop_or_pad(v[0], -1, 2, 5, 4)));
    let pair = |rng: &mut Rng| {
        named(vec![("a", rand(s(2, 3, 4, 4), rng, -1.0, 1.0)), ("b", rand(s(2, 3, 4, 4), rng, -1.0, 1.0))])
    };
    cases.push(pointwise_case("add", pair(&mut rng), |t, v| t.add(v[0], v[1])));
    cases.push(pointwise_case("sub", pair(&mut rng), |t, v| t.sub(v[0], v[1])));
    cases.push(pointwise_case("mul", pair(&mut rng), |t, v| t.mul(v[0], v[1])));
    let parts =
        named(vec![("a", rand(s(2, 2, 3, 3), &mut rng, -1.0, 1.0)), ("b", rand(s(2, 3, 3, 3), &mut rng, -1.0, 1.0))]);
    cases.push(pointwise_case("concat", parts, |t, v| t.concat(&[v[0], v[1]])));
    cases.push(GradCase::new("sum", "sum", x(&mut rng), |t, v| Ok(t.sum(v[0]))));

    let pred = rand(s(2, 3, 4, 4), &mut rng, -1.0, 1.0);
    let target = rand(s(2, 3, 4, 4), &mut rng, -1.0, 1.0);
    cases.push(GradCase::new(
        "loss_l2",
        "loss",
        named(vec![("prediction", pred.clone()), ("target", target)]),
        |t, v| t.loss(LossKind::L2, v[0], v[1]),
    ));
    let gap = away_from_zero(s(2, 3, 4, 4), &mut rng, 0.05, 1.0);
    let target = Tensor::from_fn(pred.shape(), |n, c, y, x| pred.at(n, c, y, x) - gap.at(n, c, y, x));
    cases.push(GradCase::new("loss_l1", "loss", named(vec![("prediction", pred), ("target", target)]), |t, v| {
        t.loss(LossKind::L1, v[0], v[1])
    }));
    let inputs = named(vec![
        ("offsets", rand(s(1, 18, 3, 3), &mut rng, -2.0, 2.0)),
        ("masks", rand(s(1, 9, 3, 3), &mut rng, 0.0, 1.0)),
    ]);
    cases.push(GradCase::new("upsample_offsets", "upsample_offsets", inputs, |t, v| {
        let up = upsample_offsets(t, OffsetFields { offsets: v[0], masks: v[1] });
        let cat = t.concat(&[up.offsets, up.masks])?;
        project(t, cat, 4)
    }));
    cases
}

/// Two-scale network used by the end-to-end check.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        offset_channels: 4,
        resblocks_per_scale: 1,
        rsabs_per_scale: 1,
        ..ModelConfig::default().with_channels(&[4, 8])
    }
}

/// Random parameters for the micro model: weights uniform in
/// `[-0.25, 0.25]` and biases in `[-0.1, 0.1]`, except that the offset
/// heads emit small offsets with fractional parts in `[0.3, 0.7]`.
fn micro_model_point(net: &Sadnet, seed: u64) -> Result<Vec<(String, Tensor<f64>)>> {
    let mut params = net.init_params::<f64>(seed)?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    for layer in net.layers() {
        let w = params.get_mut(layer.weight);
        *w = rng.uniform_tensor(w.shape(), -0.25, 0.25);
        let b = params.get_mut(layer.bias);
        *b = rng.uniform_tensor(b.shape(), -0.1, 0.1);
    }
    let taps = net.config().taps();
    for stage in &net.decoder {
        let out = &stage.offsets.out;
        let w = params.get_mut(out.weight);
        *w = rng.uniform_tensor(w.shape(), -0.02, 0.02);
        let b = params.get_mut(out.bias);
        *b = Tensor::from_fn(b.shape(), |n, _, _, _| {
            if n < 2 * taps {
                fractional_offsets(Shape::scalar(), &mut rng, 1).data()[0]
            } else {
                rng.uniform_range(-1.0, 1.0)
            }
        });
    }
    Ok((0..params.len()).map(|i| (String::from(params.name(ParamId(i))), params.get(ParamId(i)).clone())).collect())
}

/// L2 loss of the two-scale micro network, differentiated with respect to
/// every parameter tensor and the input. Tries successive seeds until the
/// evaluation point keeps a margin of `min_margin` from every kink.
pub fn model_suite(seed: u64, min_margin: f64) -> Result<Vec<GradCase>> {
    let net = Sadnet::new(micro_model_config())?;
    for attempt in 0..64u64 {
        let s = seed.wrapping_add(attempt);
        let mut rng = Rng::new(s);
        let shape = Shape::new(1, 1, 4, 4);
        let mut inputs = vec![(String::from("input"), rng.uniform_tensor(shape, 0.0, 1.0))];
        let target = rng.uniform_tensor(shape, 0.0, 1.0);
        inputs.extend(micro_model_point(&net, s)?);
        let model = net.clone();
        let case = GradCase::new("micro_model_l2", "sadnet_forward", inputs, move |t, v| {
            let pass = model.forward(t, &v[1..], v[0])?;
            let target = t.constant(target.clone());
            t.loss(LossKind::L2, pass.output, target)
        });
        if case.kink_margin()? >= min_margin {
            return Ok(vec![case]);
        }
    }
    Err(Error::Numeric(format!("no evaluation point with kink margin {min_margin} found")))
}

/// Conv case whose weight gradient is deliberately scaled by 1.1, to prove
/// the checker catches a wrong backward rule.
pub fn corrupted_conv_case(seed: u64) -> GradCase {
    let mut rng = Rng::new(seed);
    let inputs = named(vec![
        ("input", rand(Shape::new(1, 2, 5, 5), &mut rng, -1.0, 1.0)),
        ("weight", rand(Shape::new(3, 2, 3, 3), &mut rng, -0.5, 0.5)),
    ]);
    GradCase::new("conv2d_corrupted", "conv2d", inputs, |t, v| {
        let spec = ConvSpec::same(3, 1);
        let value = crate::conv::conv2d(t.value(v[0]), t.value(v[1]), None, &spec)?;
        let y = t.custom(
            &[v[0], v[1]],
            value,
            Box::new(move |g, xs| {
                let grads = crate::conv::conv2d_backward(xs[0], xs[1], &spec, g, [true, true, false])
                    .expect("shapes checked in forward");
                vec![grads.input, grads.weight.map(|w| w.map(|e| e * 1.1))]
            }),
        );
        project(t, y, 5)
    })
}
