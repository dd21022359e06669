//! File formats, training driver and command-line tools for the
//! spatial-adaptive denoising network in [`sadnet_core`].

pub mod checkpoint;
pub mod config;
mod error;
pub mod infer;
pub mod manifest;
pub mod netpbm;
pub mod tools;
pub mod train;

pub use error::{Error, Result};
