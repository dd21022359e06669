use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ForwardPass;
use crate::error::{usage_err, Result};
use crate::{Scalar, Tape};

/// Column names of the offset dump.
pub const OFFSET_CSV_HEADER: &str = "scale,py,px,k,sample_y,sample_x,modulation";

/// One kernel tap of one deformable layer at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetRow {
    pub scale: usize,
    /// Grid point in full-resolution pixels.
    pub py: usize,
    pub px: usize,
    /// Kernel tap, row-major.
    pub k: usize,
    /// Sampling position `p_k + Δp_k` in pixels of scale `scale`.
    pub sample_y: f64,
    pub sample_x: f64,
    pub modulation: f64,
}

/// Regular grid with spacing `step`, offset by half a step from the origin.
pub fn grid_points(h: usize, w: usize, step: usize) -> Vec<(usize, usize)> {
    let step = step.max(1);
    let ys = (step / 2..h).step_by(step);
    ys.flat_map(|y| (step / 2..w).step_by(step).map(move |x| (y, x))).collect()
}

/// Sampling positions and modulation of every scale's deformable fields at
/// `grid` (full-resolution points), for batch item 0.
pub fn collect_offsets<T: Scalar>(
    tape: &Tape<T>,
    pass: &ForwardPass,
    kernel_size: usize,
    grid: &[(usize, usize)],
) -> Result<Vec<OffsetRow>> {
    let taps = kernel_size * kernel_size;
    let r = (kernel_size / 2) as f64;
    let mut rows = Vec::with_capacity(pass.scales.len() * grid.len() * taps);
    for state in &pass.scales {
        let s = state.scale;
        let off = tape.value(state.fields.offsets);
        let mask = tape.value(state.fields.masks);
        for &(py, px) in grid {
            let (y, x) = (py >> s, px >> s);
            if y >= off.shape().h || x >= off.shape().w {
                return Err(usage_err!("grid point ({py}, {px}) lies outside the image"));
            }
            for k in 0..taps {
                let (ki, kj) = ((k / kernel_size) as f64, (k % kernel_size) as f64);
                rows.push(OffsetRow {
                    scale: s,
                    py,
                    px,
                    k,
                    sample_y: y as f64 + ki - r + off.at(0, 2 * k, y, x).to_f64(),
                    sample_x: x as f64 + kj - r + off.at(0, 2 * k + 1, y, x).to_f64(),
                    modulation: mask.at(0, k, y, x).to_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// Header plus one LF-terminated line per row.
pub fn offsets_to_csv(rows: &[OffsetRow]) -> String {
    let mut out = String::from(OFFSET_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scale, r.py, r.px, r.k, r.sample_y, r.sample_x, r.modulation
        ));
    }
    out
}
