//! Images, synthetic noise, patch sampling and dihedral augmentation.

mod augment;
mod image;
mod noise;
mod patches;

pub use augment::{augment, compose, inverse, AUGMENT_CODES};
pub use image::{dequantize, quantize, ImageBuffer};
pub(crate) use noise::add_awgn_with;
pub use noise::{add_awgn, NoiseSpec};
pub use patches::{crop, crop_top_left, extract_patches, pad_reflect, random_corner};
