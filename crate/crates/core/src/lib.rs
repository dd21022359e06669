//! Spatial-adaptive denoising network.
//!
//! A self-contained, `no_std` (with `alloc`) implementation of a multi-scale
//! encoder-decoder denoiser built from residual blocks, residual
//! spatial-adaptive blocks (modulated deformable convolution with offsets
//! refined from coarse to fine scales) and a dilated context block, together
//! with the reverse-mode autodiff engine, optimizer, data augmentation,
//! synthetic noise and image-quality metrics needed to train and evaluate it.
//!
//! File formats, the command-line interface and the training driver live in
//! the `sadnet` companion crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

mod error;
mod scalar;
mod tensor;

pub mod conv;
pub mod data;
pub mod deform;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod random;
pub mod resample;
pub mod tape;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use conv::ConvSpec;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, LossKind, Tape, Var};
pub use tensor::{Shape, Tensor};
