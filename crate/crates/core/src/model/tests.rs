use alloc::vec;
use alloc::vec::Vec;

use super::blocks::{Init, Layout};
use super::*;
use crate::conv::{conv2d, conv_transpose2d};
use crate::deform::modulated_deform_conv2d;
use crate::params::ParamStore;
use crate::resample::upsample2x;
use crate::testutil::{rand_tensor, rel_close};
use crate::{ConvSpec, Shape, Tape, Tensor, Var};

fn leaky(t: &Tensor<f64>, slope: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v } else { slope * v })
}

fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut out = a.clone();
    out.add_assign_slice(b.data());
    out
}

fn concat(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let s = parts[0].shape();
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    Tensor::from_fn(Shape::new(s.n, c, s.h, s.w), |n, mut ch, y, x| {
        for p in parts {
            if ch < p.shape().c {
                return p.at(n, ch, y, x);
            }
            ch -= p.shape().c;
        }
        unreachable!()
    })
}

/// Parameters for `layout`, randomly filled.
fn random_store(layout: &Layout, seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (i, l) in layout.layers.iter().enumerate() {
        store
            .push(alloc::format!("{}.weight", l.name), rand_tensor(l.weight_shape(), seed + 2 * i as u64, 0.3))
            .unwrap();
        store
            .push(alloc::format!("{}.bias", l.name), rand_tensor(Shape::vector(l.out_c), seed + 2 * i as u64 + 1, 0.3))
            .unwrap();
    }
    store
}

fn zero_store(layout: &Layout) -> ParamStore<f64> {
    let mut store = random_store(layout, 0);
    for i in 0..store.len() {
        let t = store.get_mut(crate::params::ParamId(i));
        *t = Tensor::zeros(t.shape());
    }
    store
}

fn wb<'a>(store: &'a ParamStore<f64>, l: &ConvLayer) -> (&'a Tensor<f64>, &'a Tensor<f64>) {
    (store.get(l.weight), store.get(l.bias))
}

fn same3() -> ConvSpec {
    ConvSpec::same(3, 1)
}

#[test]
fn resblock_zero_weights_is_identity() {
    let mut l = Layout::default();
    let rb = ResBlock::new(&mut l, "rb", 32, 3, 0);
    let store = zero_store(&l);
    let x = rand_tensor::<f64>(Shape::new(1, 32, 16, 16), 1, 1.0);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = rb.forward(&mut tape, &p, xv, 0.2).unwrap();
    assert_eq!(tape.shape(y), Shape::new(1, 32, 16, 16));
    assert_eq!(*tape.value(y), x);
}

#[test]
fn resblock_matches_primitive_composition() {
    let mut l = Layout::default();
    let rb = ResBlock::new(&mut l, "rb", 4, 3, 0);
    let store = random_store(&l, 10);
    let x = rand_tensor::<f64>(Shape::new(2, 4, 6, 7), 2, 1.0);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = rb.forward(&mut tape, &p, xv, 0.2).unwrap();

    let (w1, b1) = wb(&store, &rb.conv1);
    let (w2, b2) = wb(&store, &rb.conv2);
    let h = leaky(&conv2d(&x, w1, Some(b1), &same3()).unwrap(), 0.2);
    let expect = add(&conv2d(&h, w2, Some(b2), &same3()).unwrap(), &x);
    assert!(rel_close(tape.value(y), &expect, 1e-6));
}

fn rsab_setup(seed: u64) -> (Layout, Rsab, ResBlock, ParamStore<f64>, ParamStore<f64>) {
    let mut l = Layout::default();
    let rsab = Rsab::new(&mut l, "rsab", 4, 3, 0);
    let store = random_store(&l, seed);
    let mut l2 = Layout::default();
    let rb = ResBlock::new(&mut l2, "rb", 4, 3, 0);
    let mut rb_store = ParamStore::new();
    for i in 0..4 {
        let id = crate::params::ParamId(i);
        rb_store.push(alloc::format!("p{i}"), store.get(id).clone()).unwrap();
    }
    (l, rsab, rb, store, rb_store)
}

fn run_rsab(rsab: &Rsab, store: &ParamStore<f64>, x: &Tensor<f64>, off: &Tensor<f64>, m: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let (xv, ov, mv) = (tape.constant(x.clone()), tape.constant(off.clone()), tape.constant(m.clone()));
    let y = rsab.forward(&mut tape, &p, xv, ov, mv, 0.2).unwrap();
    tape.value(y).clone()
}

#[test]
fn rsab_reduces_to_resblock() {
    let (_, rsab, rb, store, rb_store) = rsab_setup(20);
    let x = rand_tensor::<f64>(Shape::new(1, 4, 8, 8), 3, 1.0);
    let off = Tensor::zeros(Shape::new(1, 18, 8, 8));
    let ones = Tensor::full(Shape::new(1, 9, 8, 8), 1.0);
    let y = run_rsab(&rsab, &store, &x, &off, &ones);

    let mut tape = Tape::new();
    let p = rb_store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let r = rb.forward(&mut tape, &p, xv, 0.2).unwrap();
    assert!(tape.value(r).max_abs_diff(&y) < 1e-6);
}

#[test]
fn rsab_zero_weights_and_composition() {
    let mut l = Layout::default();
    let rsab = Rsab::new(&mut l, "rsab", 3, 3, 0);
    let x = rand_tensor::<f64>(Shape::new(1, 3, 6, 6), 4, 1.0);
    let off = rand_tensor::<f64>(Shape::new(1, 18, 6, 6), 5, 1.5);
    let m = rand_tensor::<f64>(Shape::new(1, 9, 6, 6), 6, 0.5).map(|v| v + 0.5);
    assert_eq!(run_rsab(&rsab, &zero_store(&l), &x, &off, &m), x);

    let store = random_store(&l, 30);
    let y = run_rsab(&rsab, &store, &x, &off, &m);
    let (wd, bd) = wb(&store, &rsab.dcn);
    let (wc, bc) = wb(&store, &rsab.conv);
    let h = leaky(&modulated_deform_conv2d(&x, wd, Some(bd), &off, &m, &same3()).unwrap(), 0.2);
    let expect = add(&conv2d(&h, wc, Some(bc), &same3()).unwrap(), &x);
    assert!(rel_close(&y, &expect, 1e-6));
}

fn upsample_fields(off: &Tensor<f64>, m: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let fields = OffsetFields { offsets: tape.constant(off.clone()), masks: tape.constant(m.clone()) };
    let up = upsample_offsets(&mut tape, fields);
    (tape.value(up.offsets).clone(), tape.value(up.masks).clone())
}

#[test]
fn upsampled_offsets_double_in_size_and_value() {
    let (o, m) =
        upsample_fields(&Tensor::full(Shape::new(1, 18, 4, 5), 1.5), &Tensor::full(Shape::new(1, 9, 4, 5), 0.7));
    assert_eq!(o.shape(), Shape::new(1, 18, 8, 10));
    assert_eq!(m.shape(), Shape::new(1, 9, 8, 10));
    assert!(o.data().iter().all(|&v| v == 3.0));
    assert!(m.data().iter().all(|&v| v == 0.7));
}

#[test]
fn upsampled_ramp_matches_direct_bilinear() {
    // f(y, x) = 0.5 y - 0.25 x + 1 sampled on a 4×4 grid.
    let f = |y: f64, x: f64| 0.5 * y - 0.25 * x + 1.0;
    let off = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, _, y, x| f(y as f64, x as f64));
    let (o, _) = upsample_fields(&off, &Tensor::full(Shape::new(1, 1, 4, 4), 0.5));
    for y in 0..8 {
        for x in 0..8 {
            // Half-pixel source coordinate, clamped at the border.
            let sy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
            let sx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
            assert!((o.at(0, 1, y, x) - 2.0 * f(sy, sx)).abs() < 1e-12);
        }
    }
}

fn offset_head(has_prev: bool) -> (Layout, OffsetHead) {
    let mut l = Layout::default();
    let head = OffsetHead::new(&mut l, "off", 4, 5, 3, 0, has_prev);
    (l, head)
}

#[test]
fn offset_head_initial_state() {
    let (l, head) = offset_head(false);
    assert_eq!(l.layers[1].init, Init::Zeros);
    let mut store = random_store(&l, 40);
    for id in [head.out.weight, head.out.bias] {
        let t = store.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = tape.constant(rand_tensor(Shape::new(2, 4, 6, 6), 7, 1.0));
    let f = head.forward(&mut tape, &p, x, None, 0.2).unwrap();
    assert_eq!(tape.shape(f.offsets), Shape::new(2, 18, 6, 6));
    assert_eq!(tape.shape(f.masks), Shape::new(2, 9, 6, 6));
    assert!(tape.value(f.offsets).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(f.masks).data().iter().all(|&v| v == 0.5));
}

#[test]
fn offset_head_prev_branch_only() {
    let (l, head) = offset_head(true);
    let mut store = random_store(&l, 50);
    for id in [head.feat.weight, head.feat.bias] {
        let t = store.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let prev_off = rand_tensor::<f64>(Shape::new(1, 18, 3, 3), 8, 2.0);
    let prev_m = rand_tensor::<f64>(Shape::new(1, 9, 3, 3), 9, 0.5).map(|v| v + 0.5);
    let run = |x: Tensor<f64>| {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let prev = OffsetFields { offsets: tape.constant(prev_off.clone()), masks: tape.constant(prev_m.clone()) };
        let f = head.forward(&mut tape, &p, xv, Some(prev), 0.2).unwrap();
        (tape.value(f.offsets).clone(), tape.value(f.masks).clone())
    };
    let (o1, m1) = run(rand_tensor(Shape::new(1, 4, 6, 6), 10, 1.0));
    let (o2, m2) = run(rand_tensor(Shape::new(1, 4, 6, 6), 11, 1.0));
    assert_eq!((&o1, &m1), (&o2, &m2));

    let up_off = upsample2x(&prev_off).map(|v| 2.0 * v);
    let up_m = upsample2x(&prev_m);
    let hidden = Tensor::zeros(Shape::new(1, 5, 6, 6));
    let (w, b) = wb(&store, &head.out);
    let raw = conv2d(&concat(&[&hidden, &up_off, &up_m]), w, Some(b), &same3()).unwrap();
    let expect_off = Tensor::from_fn(Shape::new(1, 18, 6, 6), |n, c, y, x| raw.at(n, c, y, x));
    let expect_m = Tensor::from_fn(Shape::new(1, 9, 6, 6), |n, c, y, x| 1.0 / (1.0 + (-raw.at(n, 18 + c, y, x)).exp()));
    assert!(rel_close(&o1, &expect_off, 1e-6));
    assert!(rel_close(&m1, &expect_m, 1e-6));
}

#[test]
fn offset_head_prev_contract() {
    let (l, head) = offset_head(true);
    let store = random_store(&l, 1);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = tape.constant(rand_tensor(Shape::new(1, 4, 4, 4), 1, 1.0));
    assert!(head.forward(&mut tape, &p, x, None, 0.2).is_err());
}

fn context(c: usize, dilations: &[usize]) -> (Layout, ContextBlock) {
    let mut l = Layout::default();
    let cb = ContextBlock::new(&mut l, c, 4, dilations, 3, 0).unwrap();
    (l, cb)
}

fn run_context(cb: &ContextBlock, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = cb.forward(&mut tape, &p, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn context_block_identity_and_shape() {
    let (l, cb) = context(256, &[1, 2, 3, 4]);
    let x = rand_tensor::<f64>(Shape::new(1, 256, 16, 16), 12, 1.0);
    let y = run_context(&cb, &zero_store(&l), &x);
    assert_eq!(y, x);
    let y = run_context(&cb, &random_store(&l, 3), &x);
    assert_eq!(y.shape(), Shape::new(1, 256, 16, 16));
}

#[test]
fn context_block_dilation4_footprint() {
    let (l, cb) = context(4, &[1, 2, 3, 4]);
    let mut store = zero_store(&l);
    // Pass the impulse straight through compression and fusion, keep only
    // the dilation-4 branch with an all-ones kernel.
    *store.get_mut(cb.compress.weight) = Tensor::from_fn(Shape::new(1, 4, 1, 1), |_, c, _, _| (c == 0) as u8 as f64);
    *store.get_mut(cb.branches[3].weight) = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
    *store.get_mut(cb.fuse.weight) =
        Tensor::from_fn(Shape::new(4, 4, 1, 1), |o, c, _, _| (o == 0 && c == 3) as u8 as f64);
    let mut x = Tensor::zeros(Shape::new(1, 4, 21, 21));
    x.set(0, 0, 10, 10, 1.0);
    let y = run_context(&cb, &store, &x);
    let mut response = Vec::new();
    for yy in 0..21 {
        for xx in 0..21 {
            let r = y.at(0, 0, yy, xx) - x.at(0, 0, yy, xx);
            if r != 0.0 {
                response.push((yy, xx));
            }
        }
    }
    let ys: Vec<_> = response.iter().map(|p| p.0).collect();
    let xs: Vec<_> = response.iter().map(|p| p.1).collect();
    assert_eq!(response.len(), 9);
    assert_eq!((*ys.iter().min().unwrap(), *ys.iter().max().unwrap()), (6, 14));
    assert_eq!((*xs.iter().min().unwrap(), *xs.iter().max().unwrap()), (6, 14));
}

#[test]
fn context_block_rejects_indivisible_channels() {
    let mut l = Layout::default();
    assert!(matches!(ContextBlock::new(&mut l, 30, 4, &[1, 2, 3, 4], 3, 0), Err(crate::Error::Config(_))));
}

fn forward_f64(net: &Sadnet, params: &ParamStore<f64>, x: &Tensor<f64>) -> (Tape<f64>, ForwardPass) {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let pass = net.forward(&mut tape, &p, xv).unwrap();
    (tape, pass)
}

#[test]
fn identity_at_initialization() {
    let net = Sadnet::new(ModelConfig::micro(3)).unwrap();
    let params = net.init_params::<f64>(5).unwrap();
    for seed in 0..3 {
        let x = rand_tensor::<f64>(Shape::new(1, 3, 16, 24), seed, 1.0);
        assert_eq!(net.denoise(&params, &x).unwrap(), x);
    }
}

#[test]
fn default_scale_bookkeeping() {
    let net = Sadnet::new(ModelConfig::default()).unwrap();
    let params = net.init_params::<f32>(1).unwrap();
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let x = tape.constant(rand_tensor(Shape::new(1, 3, 64, 64), 2, 1.0));
    let pass = net.forward(&mut tape, &p, x).unwrap();
    assert_eq!(tape.shape(pass.output), Shape::new(1, 3, 64, 64));
    for (s, (&c, &size)) in [32, 64, 128, 256].iter().zip(&[64, 32, 16, 8]).enumerate() {
        assert_eq!(tape.shape(pass.encoder[s]), Shape::new(1, c, size, size));
        let st = pass.scales[s];
        assert_eq!(st.scale, s);
        assert_eq!(tape.shape(st.features), Shape::new(1, c, size, size));
        assert_eq!(tape.shape(st.fields.offsets), Shape::new(1, 18, size, size));
        assert_eq!(tape.shape(st.fields.masks), Shape::new(1, 9, size, size));
    }
}

#[test]
fn indivisible_input_is_usage_error() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let params = net.init_params::<f32>(1).unwrap();
    let x = Tensor::zeros(Shape::new(1, 1, 20, 16));
    match net.denoise(&params, &x) {
        Err(crate::Error::Usage(msg)) => assert!(msg.contains("pad"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn init_layout() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let params = net.init_params::<f32>(3).unwrap();
    net.check_params(&params).unwrap();
    assert_eq!(params.numel(), net.param_count());
    assert!(params.by_name("tail.weight").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(params.by_name("dec0.offset.out.weight").unwrap().data().iter().all(|&v| v == 0.0));
    let head = params.by_name("head.weight").unwrap();
    assert!(head.data().iter().any(|&v| v != 0.0));
    let bound = (6.0f32 / 1.0).sqrt();
    assert!(head.data().iter().all(|v| v.abs() <= bound));
    let up = net.decoder[2].up.as_ref().unwrap();
    assert_eq!(up.weight_shape(), Shape::new(32, 16, 2, 2));
    assert_eq!(up.fan_in(), 32);
}

#[test]
fn check_params_names_mismatch() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let other = Sadnet::new(ModelConfig::micro(3)).unwrap();
    let params = other.init_params::<f32>(3).unwrap();
    assert!(net.check_params(&params).is_err());
}

#[test]
fn single_conv_param_count() {
    let mut l = Layout::default();
    let c = l.same(alloc::string::String::from("c"), 3, 32, 3, 0);
    assert_eq!(c.param_count(), 896);
}

#[test]
fn default_cost_near_reported() {
    let cost = count_params_flops(&ModelConfig::default(), 320, 480).unwrap();
    let p = cost.params as f64;
    assert!((p / 4_321_000.0 - 1.0).abs() <= 0.25, "{p}");
    let macs = cost.total_macs() as f64;
    assert!((macs / 50.1e9 - 1.0).abs() <= 0.30, "{macs}");
    assert_eq!(cost.flops(), 2 * cost.total_macs());
    let net = Sadnet::new(ModelConfig::default()).unwrap();
    assert_eq!(cost.params as usize, net.init_params::<f32>(0).unwrap().numel());
}

#[test]
fn reported_unit_is_multiply_accumulates() {
    // A 17-layer, 64-channel plain network on 480×320 color input costs
    // 85.5G multiply-accumulates; the comparison table lists 86.1G for it.
    let mut l = Layout::default();
    let mut layers = vec![l.same("first".into(), 3, 64, 3, 0)];
    for i in 0..15 {
        layers.push(l.same(alloc::format!("mid{i}"), 64, 64, 3, 0));
    }
    layers.push(l.same("last".into(), 64, 3, 3, 0));
    let macs: u64 = layers.iter().map(|c| c.macs(320, 480).0).sum();
    assert!((macs as f64 / 86.1e9 - 1.0).abs() < 0.01, "{macs}");
    let params: usize = layers.iter().map(ConvLayer::param_count).sum();
    assert!((params as f64 / 558e3 - 1.0).abs() < 0.01, "{params}");
}

#[test]
fn transposed_and_deformable_costs() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let up = net.decoder[2].up.as_ref().unwrap();
    // 8×8 input at scale 2 of a 32×32 image, 2×2 kernel, 32 → 16 channels.
    assert_eq!(up.macs(32, 32), (8 * 8 * 4 * 32 * 16, 0));
    let dcn = &net.decoder[3].rsabs[0].dcn;
    assert_eq!(dcn.macs(32, 32), (32 * 32 * 9 * 8 * 8, 32 * 32 * 9 * 8 * 5));
}

#[test]
fn export_untrained_model() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let params = net.init_params::<f64>(9).unwrap();
    let x = rand_tensor::<f64>(Shape::new(1, 1, 32, 32), 3, 1.0);
    let (tape, pass) = forward_f64(&net, &params, &x);
    let grid = grid_points(32, 32, 8);
    assert_eq!(grid.len(), 16);
    let rows = collect_offsets(&tape, &pass, 3, &grid).unwrap();
    assert_eq!(rows.len(), 4 * 16 * 9);
    for r in &rows {
        let (y, x) = ((r.py >> r.scale) as f64, (r.px >> r.scale) as f64);
        assert_eq!(r.sample_y, y + (r.k / 3) as f64 - 1.0);
        assert_eq!(r.sample_x, x + (r.k % 3) as f64 - 1.0);
        assert_eq!(r.modulation, 0.5);
    }
    let csv = offsets_to_csv(&rows);
    assert!(csv.starts_with("scale,py,px,k,sample_y,sample_x,modulation\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
    let _ = Var::index;
}

#[test]
fn transposed_weight_layout_used_by_decoder() {
    let net = Sadnet::new(ModelConfig::micro(1)).unwrap();
    let params = net.init_params::<f64>(2).unwrap();
    let up = net.decoder[3].up.as_ref().unwrap();
    let x = rand_tensor::<f64>(Shape::new(1, up.in_c, 4, 4), 1, 1.0);
    let (w, b) = (params.get(up.weight), params.get(up.bias));
    let y = conv_transpose2d(&x, w, Some(b), &up.spec).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 8, 8, 8));
}
