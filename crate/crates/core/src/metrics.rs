//! PSNR and SSIM on 8-bit images.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `C1 = (0.01·255)²`,
//! `C2 = (0.03·255)²`, and averages over window positions that lie fully
//! inside the image. Color images are scored per channel and the channel
//! scores averaged.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::ImageBuffer;
use crate::error::{usage_err, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Peak signal-to-noise ratio in dB; identical images score `Infinite`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64, peak: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * libm::log10(peak * peak / mse))
        }
    }

    /// Decibels, `f64::INFINITY` for the infinite case.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(usage_err!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        ));
    }
    Ok(())
}

/// Mean squared error over all samples.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.samples().len() as f64)
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<Psnr> {
    psnr_peak(a, b, 255.0)
}

pub fn psnr_peak(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(a, b)?, peak))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.samples().iter().skip(c).step_by(img.channels()).map(|&v| v as f64).collect()
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_taps();
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// Structural similarity; see the module docs for the convention.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(usage_err!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"));
    }
    let c = a.channels();
    let sum: f64 = (0..c).map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), h, w)).sum();
    Ok(sum / c as f64)
}

/// Scores of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricEntry {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-image scores and their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, psnr: Psnr, ssim: f64) {
        self.entries.push(MetricEntry { name: name.into(), psnr, ssim });
    }

    /// Arithmetic mean of the per-image PSNRs; infinite if any entry is.
    pub fn mean_psnr(&self) -> Option<Psnr> {
        if self.entries.is_empty() {
            return None;
        }
        if self.entries.iter().any(|e| e.psnr.is_infinite()) {
            return Some(Psnr::Infinite);
        }
        let s: f64 = self.entries.iter().map(|e| e.psnr.db()).sum();
        Some(Psnr::Finite(s / self.entries.len() as f64))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.ssim).sum::<f64>() / self.entries.len() as f64)
    }

    /// `image\tpsnr_db\tssim` rows followed by a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("image\tpsnr_db\tssim\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{:.6}\n", e.name, e.psnr, e.ssim));
        }
        if let (Some(p), Some(s)) = (self.mean_psnr(), self.mean_ssim()) {
            out.push_str(&format!("mean\t{p}\t{s:.6}\n"));
        }
        out
    }

    /// Aligned columns for terminals.
    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "image", "PSNR (dB)", "SSIM");
        for e in &self.entries {
            out.push_str(&format!("{:<width$}  {:>10}  {:>8.4}\n", e.name, format!("{}", e.psnr), e.ssim));
        }
        if let (Some(p), Some(s)) = (self.mean_psnr(), self.mean_ssim()) {
            out.push_str(&format!("{:<width$}  {:>10}  {:>8.4}\n", "mean", format!("{p}"), s));
        }
        out
    }
}
