//! The `inspect`, `make-noisy` and `gradcheck` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sadnet_core::data::ImageBuffer;
use sadnet_core::data::{add_awgn, NoiseSpec};
use sadnet_core::gradcheck::{model_suite, ops_suite, run_suite, GradCheckConfig, GradReport};
use sadnet_core::model::{ConvKind, ModelConfig, Sadnet};

use crate::config::{model_from_pairs, parse_pairs};
use crate::error::{self, Error, Result};
use crate::manifest::{self, ManifestEntry};
use crate::netpbm;

/// Model section of a config file; training keys are accepted and ignored.
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    model_from_pairs(&parse_pairs(&error::read_text(path)?)?)
}

fn kind_name(kind: ConvKind) -> &'static str {
    match kind {
        ConvKind::Standard => "conv",
        ConvKind::Transposed => "conv_transpose",
        ConvKind::Deformable => "deform_conv",
    }
}

/// Architecture summary and cost on an `h × w` input.
///
/// The first block holds `key<TAB>value` lines; `macs_total` counts
/// multiply-accumulates including deformable sampling, the unit network
/// comparisons usually call FLOPs, and `flops` counts two operations per
/// multiply-accumulate. A tab-separated per-layer table follows a blank line.
pub fn inspect(config: &ModelConfig, h: usize, w: usize) -> Result<String> {
    let net = Sadnet::new(config.clone())?;
    net.check_input(sadnet_core::Shape::new(1, config.in_channels, h, w))?;
    let cost = net.cost(h, w);
    let layer = |name: &str| net.layers().iter().find(|l| l.name == name).expect("layer exists");
    let head = layer("head");
    let tail = layer("tail");
    let down = net.encoder.first().and_then(|s| s.down.as_ref());
    let up = &net.decoder.last().expect("at least one scale").up;
    let mut out = String::new();
    for (k, v) in config.fields() {
        writeln!(out, "{k}\t{v}").unwrap();
    }
    let kernel = |l: &sadnet_core::model::ConvLayer| format!("{0}x{0}", l.kernel);
    let stride = |l: &sadnet_core::model::ConvLayer| format!("{}x{}", l.spec.stride.0, l.spec.stride.1);
    writeln!(out, "head_kernel\t{}", kernel(head)).unwrap();
    writeln!(out, "tail_kernel\t{}", kernel(tail)).unwrap();
    if let Some(d) = down {
        writeln!(out, "down_kernel\t{}\ndown_stride\t{}", kernel(d), stride(d)).unwrap();
    }
    if let Some(u) = up {
        writeln!(out, "up_kernel\t{}\nup_stride\t{}", kernel(u), stride(u)).unwrap();
    }
    writeln!(out, "input\t{w}x{h}x{}", config.in_channels).unwrap();
    writeln!(out, "params\t{}", cost.params).unwrap();
    writeln!(out, "macs_conv\t{}", cost.macs).unwrap();
    writeln!(out, "macs_sampling\t{}", cost.sampling_macs).unwrap();
    writeln!(out, "macs_total\t{}", cost.total_macs()).unwrap();
    writeln!(out, "macs_total_g\t{:.2}", cost.total_macs() as f64 / 1e9).unwrap();
    writeln!(out, "flops\t{}", cost.flops()).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "layer\tkind\tin\tout\tkernel\tstride\tdilation\tparams\tmacs\tsampling_macs").unwrap();
    for (l, c) in net.layers().iter().zip(&cost.layers) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            l.name,
            kind_name(l.kind),
            l.in_c,
            l.out_c,
            kernel(l),
            stride(l),
            l.spec.dilation.0,
            c.params,
            c.macs,
            c.sampling_macs
        )
        .unwrap();
    }
    Ok(out)
}

/// Value of `key` in the first block of [`inspect`] output.
pub fn inspect_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().take_while(|l| !l.is_empty()).find_map(|l| l.strip_prefix(key)?.strip_prefix('\t'))
}

fn is_netpbm(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("pgm" | "ppm"))
}

/// Adds noise of level `sigma` to every PGM/PPM file of `in_dir`, in file
/// name order, writing images of the same names to `out_dir` together with
/// `manifest.tsv`. Image `i` uses seed `seed ^ i`. Manifest paths are the
/// canonical clean path and the bare noisy file name.
pub fn make_noisy(in_dir: &Path, sigma: f64, seed: u64, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let read = std::fs::read_dir(in_dir).map_err(|e| Error::io(in_dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(in_dir, e))?.path();
        if path.is_file() && is_netpbm(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .pgm or .ppm images", in_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(files.len());
    for (i, clean_path) in files.iter().enumerate() {
        let clean = netpbm::load_image(clean_path)?;
        let image_seed = seed ^ i as u64;
        let noisy = add_awgn(&clean.to_tensor::<f64>(), NoiseSpec { sigma, seed: image_seed })?;
        let name = PathBuf::from(clean_path.file_name().expect("listed files have names"));
        netpbm::save_image(&ImageBuffer::from_tensor(&noisy, 0)?, &out_dir.join(&name))?;
        let clean = clean_path.canonicalize().map_err(|e| Error::io(clean_path, e))?;
        entries.push(ManifestEntry { clean, noisy: name, sigma, seed: image_seed });
    }
    error::write(&out_dir.join("manifest.tsv"), manifest::to_text(&entries))?;
    Ok(entries)
}

/// Which finite-difference suites to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    Ops,
    Model,
    All,
}

pub fn gradcheck(scope: GradScope, seed: u64) -> Result<GradReport> {
    let mut cases = Vec::new();
    if scope != GradScope::Model {
        cases.extend(ops_suite(seed));
    }
    if scope != GradScope::Ops {
        cases.extend(model_suite(seed, 1e-4)?);
    }
    Ok(run_suite(&cases, &GradCheckConfig::default())?)
}
