//! One optimization step at a time.
//!
//! Iteration `i` draws everything it needs (image indices, patch corners,
//! augmentation codes, noise) from its own stream seeded with
//! `derive_seed(seed, i)`, so a run resumed from any iteration continues
//! exactly as the uninterrupted run would.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{add_awgn_with, augment, crop, random_corner, AUGMENT_CODES};
use crate::error::{usage_err, Error, Result};
use crate::model::Sadnet;
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::params::ParamStore;
use crate::random::{derive_seed, Rng};
use crate::{LossKind, Scalar, Tape, Tensor};

/// A clean training image with the noise level to corrupt it with.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainImage {
    /// `(1, c, h, w)` in `[0, 1]`.
    pub clean: Tensor<f32>,
    /// On the `[0, 255]` scale.
    pub sigma: f64,
}

/// Hyperparameters of the optimization loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub loss: LossKind,
    pub batch_size: usize,
    pub patch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            loss: LossKind::L2,
            batch_size: 16,
            patch_size: 128,
            schedule: LrSchedule::new(1e-4, 300_000),
            adam: AdamConfig::default(),
        }
    }
}

/// Outcome of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Index of the completed iteration.
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Noisy inputs and clean targets of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub noisy: Tensor<f32>,
    pub clean: Tensor<f32>,
}

/// Draws the batch of iteration `iteration`.
pub fn sample_batch(corpus: &[TrainImage], opts: &TrainOptions, seed: u64, iteration: u64) -> Result<Batch> {
    if corpus.is_empty() {
        return Err(usage_err!("training corpus is empty"));
    }
    let mut rng = Rng::new(derive_seed(seed, iteration));
    let mut clean = Vec::with_capacity(opts.batch_size);
    let mut noisy = Vec::with_capacity(opts.batch_size);
    for _ in 0..opts.batch_size {
        let img = &corpus[rng.below(corpus.len() as u64) as usize];
        let s = img.clean.shape();
        let (y, x) = random_corner(&mut rng, s.h, s.w, opts.patch_size)?;
        let code = rng.below(AUGMENT_CODES as u64) as u8;
        let patch = augment(&crop(&img.clean, 0, y, x, opts.patch_size)?, code)?;
        noisy.push(add_awgn_with(&patch, img.sigma, &mut rng)?);
        clean.push(patch);
    }
    Ok(Batch { noisy: Tensor::stack(&noisy)?, clean: Tensor::stack(&clean)? })
}

/// Network, parameters, optimizer state and progress of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Sadnet,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub opts: TrainOptions,
    pub seed: u64,
    /// Completed iterations.
    pub iteration: u64,
}

impl Trainer {
    /// Fresh run: parameters initialized from `seed`.
    pub fn new(net: Sadnet, opts: TrainOptions, seed: u64) -> Result<Self> {
        let params = net.init_params(seed)?;
        let adam = AdamState::new(opts.adam, &params);
        Ok(Trainer { net, params, adam, opts, seed, iteration: 0 })
    }

    /// Loss of the current parameters on `batch`, with gradients.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(batch.noisy.clone());
        let target = tape.constant(batch.clean.clone());
        let pass = self.net.forward(&mut tape, &p, x)?;
        let loss = tape.loss(self.opts.loss, pass.output, target)?;
        let value = tape.value(loss).data()[0].to_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value} at iteration {}", self.iteration)));
        }
        let mut grads = tape.backward(loss)?;
        Ok((value, p.iter().map(|&v| grads.take(v)).collect()))
    }

    /// Runs iteration `self.iteration` and advances the counter.
    pub fn step(&mut self, corpus: &[TrainImage]) -> Result<StepReport> {
        let batch = sample_batch(corpus, &self.opts, self.seed, self.iteration)?;
        let (loss, grads) = self.loss_and_grads(&batch)?;
        let lr = self.opts.schedule.at(self.iteration);
        self.adam.step_with_lr(&mut self.params, &grads, lr)?;
        if let Some((name, _)) = self.params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::Numeric(format!("parameter {name} became non-finite at iteration {}", self.iteration)));
        }
        let report = StepReport { iteration: self.iteration, loss, lr };
        self.iteration += 1;
        Ok(report)
    }
}
