//! The `denoise`, `eval` and `export-offsets` commands.

use std::path::Path;

use sadnet_core::data::{crop_top_left, pad_reflect, ImageBuffer};
use sadnet_core::metrics::{psnr, ssim, MetricReport};
use sadnet_core::model::{collect_offsets, grid_points, offsets_to_csv, Sadnet};
use sadnet_core::params::ParamStore;
use sadnet_core::{Tape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::error::{self, Error, Result};
use crate::manifest;
use crate::netpbm;
use crate::train::missing_error;

/// A network with its trained parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Sadnet,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Ok(Model { net: Sadnet::new(ck.model)?, params: ck.params })
    }

    /// The image as a tensor reflect-padded up to the network's size
    /// multiple.
    fn padded_input(&self, image: &ImageBuffer) -> Result<Tensor<f32>> {
        let want = self.net.config().in_channels;
        if image.channels() != want {
            return Err(Error::Data(format!("image has {} channels, the model expects {want}", image.channels())));
        }
        let m = self.net.config().size_multiple();
        let (h, w) = (image.height().div_ceil(m) * m, image.width().div_ceil(m) * m);
        Ok(pad_reflect(&image.to_tensor::<f32>(), h, w)?)
    }

    /// Denoised image of the same size, clipped to `[0, 255]`.
    pub fn denoise(&self, image: &ImageBuffer) -> Result<ImageBuffer> {
        let out = self.net.denoise(&self.params, &self.padded_input(image)?)?;
        if !out.all_finite() {
            return Err(Error::Numeric("network output is not finite".into()));
        }
        Ok(ImageBuffer::from_tensor(&crop_top_left(&out, image.height(), image.width())?, 0)?)
    }

    /// Sampling positions and modulation of every scale at a regular grid
    /// with spacing `step`, as CSV.
    pub fn offsets_csv(&self, image: &ImageBuffer, step: usize) -> Result<String> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(self.padded_input(image)?);
        let pass = self.net.forward(&mut tape, &p, x)?;
        let grid = grid_points(image.height(), image.width(), step);
        let rows = collect_offsets(&tape, &pass, self.net.config().kernel_size, &grid)?;
        Ok(offsets_to_csv(&rows))
    }
}

pub fn denoise_file(ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let model = Model::load(ckpt)?;
    let image = netpbm::load_image(input)?;
    netpbm::save_image(&model.denoise(&image)?, output)
}

pub fn export_offsets(ckpt: &Path, input: &Path, output: &Path, step: usize) -> Result<()> {
    let model = Model::load(ckpt)?;
    let image = netpbm::load_image(input)?;
    error::write(output, model.offsets_csv(&image, step)?)
}

/// Denoises every noisy image of the manifest and scores it against its
/// clean reference. Entries are named by the noisy file.
pub fn evaluate(ckpt: &Path, manifest_path: &Path) -> Result<MetricReport> {
    let entries = manifest::load(manifest_path)?;
    let missing = manifest::missing_files(&entries, true);
    if !missing.is_empty() {
        return Err(missing_error(&missing));
    }
    let model = Model::load(ckpt)?;
    let mut report = MetricReport::default();
    for e in &entries {
        let clean = netpbm::load_image(&e.clean)?;
        let noisy = netpbm::load_image(&e.noisy)?;
        if !clean.same_dims(&noisy) {
            return Err(Error::Data(format!("{} and {} differ in size", e.clean.display(), e.noisy.display())));
        }
        let out = model.denoise(&noisy)?;
        report.push(e.noisy.display().to_string(), psnr(&out, &clean)?, ssim(&out, &clean)?);
    }
    Ok(report)
}
