//! Corpus manifests: one `clean_path<TAB>noisy_path<TAB>sigma<TAB>seed` line
//! per sample. Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use crate::error::{self, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub sigma: f64,
    pub seed: u64,
}

/// Parses manifest text. Blank lines and lines starting with `#` are skipped.
pub fn parse(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [clean, noisy, sigma, seed] = fields[..] else {
            return Err(bad(&format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let sigma: f64 = sigma.trim().parse().map_err(|_| bad(&format!("invalid sigma {sigma:?}")))?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(bad(&format!("sigma must be finite and non-negative, got {sigma}")));
        }
        let seed = seed.trim().parse().map_err(|_| bad(&format!("invalid seed {seed:?}")))?;
        entries.push(ManifestEntry { clean: base.join(clean), noisy: base.join(noisy), sigma, seed });
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = parse(&error::read_text(path)?, path.parent().unwrap_or(Path::new("")))?;
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no samples", path.display())));
    }
    Ok(entries)
}

/// Inverse of [`parse`] for entries whose paths are already as they should
/// appear in the file.
pub fn to_text(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| format!("{}\t{}\t{}\t{}\n", e.clean.display(), e.noisy.display(), e.sigma, e.seed)).collect()
}

/// Every referenced file that does not exist, in manifest order.
pub fn missing_files(entries: &[ManifestEntry], include_noisy: bool) -> Vec<PathBuf> {
    let mut missing = Vec::new();
    for e in entries {
        let paths = if include_noisy { vec![&e.clean, &e.noisy] } else { vec![&e.clean] };
        for p in paths {
            if !p.is_file() && !missing.contains(p) {
                missing.push(p.clone());
            }
        }
    }
    missing
}
