use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::blocks::{ContextBlock, ConvKind, ConvLayer, Init, Layout, OffsetFields, OffsetHead, ResBlock, Rsab};
use super::ModelConfig;
use crate::error::{config_err, usage_err, Result};
use crate::params::ParamStore;
use crate::random::Rng;
use crate::{ConvSpec, Scalar, Shape, Tape, Tensor, Var};

/// Encoder blocks of one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub resblocks: Vec<ResBlock>,
    /// 2×2 stride-2 convolution to the next coarser scale.
    pub down: Option<ConvLayer>,
}

/// Decoder blocks of one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage {
    pub scale: usize,
    /// 2×2 stride-2 transposed convolution from the next coarser scale.
    pub up: Option<ConvLayer>,
    /// 3×3 convolution over `[upsampled, encoder skip]`.
    pub fuse: Option<ConvLayer>,
    pub offsets: OffsetHead,
    pub rsabs: Vec<Rsab>,
}

/// Decoder state of one scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleState {
    pub scale: usize,
    /// Features entering the scale's first RSAB.
    pub features: Var,
    pub fields: OffsetFields,
}

/// Handles to the interesting intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardPass {
    pub output: Var,
    /// Encoder output per scale, finest first.
    pub encoder: Vec<Var>,
    /// Decoder state per scale, finest first.
    pub scales: Vec<ScaleState>,
}

/// The multi-scale spatial-adaptive denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Sadnet {
    config: ModelConfig,
    layers: Vec<ConvLayer>,
    pub head: ConvLayer,
    pub encoder: Vec<EncoderStage>,
    pub context: ContextBlock,
    /// Coarsest scale first.
    pub decoder: Vec<DecoderStage>,
    pub tail: ConvLayer,
}

impl Sadnet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let (k, last) = (config.kernel_size, config.scales - 1);
        let updown = ConvSpec::new(2, 0, 1);
        let mut l = Layout::default();

        let head = l.same(String::from("head"), config.in_channels, c[0], 1, 0);
        let mut encoder = Vec::new();
        for s in 0..config.scales {
            let resblocks = (0..config.resblocks_per_scale)
                .map(|i| ResBlock::new(&mut l, &format!("enc{s}.res{i}"), c[s], k, s))
                .collect();
            let down = (s < last).then(|| {
                let name = format!("enc{s}.down");
                l.conv(
                    name,
                    ConvKind::Standard,
                    c[s],
                    c[s + 1],
                    config.updown_kernel,
                    updown,
                    (s, s + 1),
                    Init::HeUniform,
                )
            });
            encoder.push(EncoderStage { resblocks, down });
        }
        let context =
            ContextBlock::new(&mut l, c[last], config.context_compression, &config.context_dilations, k, last)?;
        let mut decoder = Vec::new();
        for s in (0..config.scales).rev() {
            let (up, fuse) = if s < last {
                let name = format!("dec{s}.up");
                let up = l.conv(
                    name,
                    ConvKind::Transposed,
                    c[s + 1],
                    c[s],
                    config.updown_kernel,
                    updown,
                    (s + 1, s),
                    Init::HeUniform,
                );
                (Some(up), Some(l.same(format!("dec{s}.fuse"), 2 * c[s], c[s], k, s)))
            } else {
                (None, None)
            };
            let offsets =
                OffsetHead::new(&mut l, &format!("dec{s}.offset"), c[s], config.offset_channels, k, s, s < last);
            let rsabs = (0..config.rsabs_per_scale)
                .map(|i| Rsab::new(&mut l, &format!("dec{s}.rsab{i}"), c[s], k, s))
                .collect();
            decoder.push(DecoderStage { scale: s, up, fuse, offsets, rsabs });
        }
        let tail = l.conv(
            String::from("tail"),
            ConvKind::Standard,
            c[0],
            config.in_channels,
            1,
            ConvSpec::default(),
            (0, 0),
            Init::Zeros,
        );
        Ok(Sadnet { config, layers: l.layers, head, encoder, context, decoder, tail })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Every convolution in parameter order.
    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Number of parameter tensors (two per layer).
    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Fresh parameters: He-uniform weights, zero biases, zero offset-head
    /// output and tail layers.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        for layer in &self.layers {
            layer.init_into(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// Checks that `params` has exactly this model's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        if params.len() != self.tensor_count() {
            return Err(config_err!("expected {} parameter tensors, found {}", self.tensor_count(), params.len()));
        }
        let mut i = 0;
        for layer in &self.layers {
            for (suffix, shape) in [("weight", layer.weight_shape()), ("bias", Shape::vector(layer.out_c))] {
                let id = crate::params::ParamId(i);
                let want = format!("{}.{suffix}", layer.name);
                if params.name(id) != want {
                    return Err(config_err!("parameter {i} is {}, expected {want}", params.name(id)));
                }
                if params.get(id).shape() != shape {
                    return Err(config_err!("{want} has shape {}, expected {shape}", params.get(id).shape()));
                }
                i += 1;
            }
        }
        Ok(())
    }

    /// Rejects inputs the network cannot process.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.config.in_channels {
            return Err(config_err!("input has {} channels, model expects {}", shape.c, self.config.in_channels));
        }
        let m = self.config.size_multiple();
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(m) || !shape.w.is_multiple_of(m) {
            return Err(usage_err!(
                "input size {}x{} is not divisible by {m}; pad the image to a multiple of {m}",
                shape.h,
                shape.w
            ));
        }
        Ok(())
    }

    /// Records the network on `tape`; `p` holds the bound parameters in
    /// [`layers`](Self::layers) order.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<ForwardPass> {
        self.check_input(tape.shape(x))?;
        if p.len() != self.tensor_count() {
            return Err(usage_err!("expected {} bound parameters, got {}", self.tensor_count(), p.len()));
        }
        let slope = self.config.leaky_slope;
        let mut h = self.head.forward(tape, p, x)?;
        let mut encoder = Vec::with_capacity(self.config.scales);
        for stage in &self.encoder {
            for rb in &stage.resblocks {
                h = rb.forward(tape, p, h, slope)?;
            }
            encoder.push(h);
            if let Some(down) = &stage.down {
                h = down.forward(tape, p, h)?;
            }
        }
        h = self.context.forward(tape, p, h)?;
        let mut states = Vec::with_capacity(self.config.scales);
        let mut prev = None;
        for stage in &self.decoder {
            if let (Some(up), Some(fuse)) = (&stage.up, &stage.fuse) {
                let u = up.forward(tape, p, h)?;
                let cat = tape.concat(&[u, encoder[stage.scale]])?;
                h = fuse.forward(tape, p, cat)?;
            }
            let fields = stage.offsets.forward(tape, p, h, prev, slope)?;
            states.push(ScaleState { scale: stage.scale, features: h, fields });
            for rsab in &stage.rsabs {
                h = rsab.forward(tape, p, h, fields.offsets, fields.masks, slope)?;
            }
            prev = Some(fields);
        }
        states.reverse();
        let noise = self.tail.forward(tape, p, h)?;
        let output = tape.add(noise, x)?;
        Ok(ForwardPass { output, encoder, scales: states })
    }

    /// Inference without gradient tracking.
    pub fn denoise<T: Scalar>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let pass = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(pass.output).clone())
    }
}
