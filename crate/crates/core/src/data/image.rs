use alloc::vec::Vec;

use crate::error::{config_err, usage_err, Result};
use crate::{Scalar, Shape, Tensor};

/// Maps a `[0, 1]` intensity to `0..=255`, rounding half up and clipping.
pub fn quantize(v: f64) -> u8 {
    if !(v > 0.0) {
        return 0;
    }
    libm::floor(v * 255.0 + 0.5).min(255.0) as u8
}

pub fn dequantize(v: u8) -> f64 {
    v as f64 / 255.0
}

/// 8-bit raster with interleaved channels, rows top to bottom.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(config_err!("images have 1 or 3 channels, got {channels}"));
        }
        if samples.len() != width * height * channels {
            return Err(config_err!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                samples.len()
            ));
        }
        Ok(ImageBuffer { width, height, channels, samples })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, alloc::vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    /// `(1, c, h, w)` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, self.channels, self.height, self.width), |_, c, y, x| {
            T::from_f64(dequantize(self.get(y, x, c)))
        })
    }

    /// Quantizes batch item `item` of a `[0, 1]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, item: usize) -> Result<Self> {
        let s = t.shape();
        if item >= s.n {
            return Err(usage_err!("batch item {item} out of range for {s}"));
        }
        let mut samples = Vec::with_capacity(s.item());
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..s.c {
                    samples.push(quantize(t.at(item, c, y, x).to_f64()));
                }
            }
        }
        Self::new(s.w, s.h, s.c, samples)
    }
}
