//! Training configuration files: flat UTF-8 `key=value` lines. Blank lines
//! and lines starting with `#` are ignored; unknown and repeated keys are
//! errors.

use std::path::{Path, PathBuf};

use sadnet_core::model::ModelConfig;
use sadnet_core::optim::{AdamConfig, LrSchedule};
use sadnet_core::train::TrainOptions;
use sadnet_core::LossKind;

use crate::error::{self, Error, Result};

/// Training keys accepted besides the [`ModelConfig::KEYS`].
pub const TRAIN_KEYS: [&str; 13] = [
    "loss",
    "batch_size",
    "patch_size",
    "lr",
    "lr_halve_at",
    "lr_extra_decays",
    "max_iters",
    "seed",
    "manifest",
    "checkpoint_dir",
    "log_interval",
    "checkpoint_interval",
    "resume",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossKind,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub lr_halve_at: u64,
    pub lr_extra_decays: Vec<u64>,
    /// 0 writes the initialization as the final checkpoint.
    pub max_iters: u64,
    pub seed: u64,
    pub manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Iterations per log record.
    pub log_interval: u64,
    /// Iterations between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

/// `key=value` pairs of a config file, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Usage(format!("config line {}: {msg}", i + 1));
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !ModelConfig::KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) {
            return Err(bad(format!("unknown key {k:?}")));
        }
        if pairs.iter().any(|(seen, _)| seen == k) {
            return Err(bad(format!("repeated key {k:?}")));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

/// Model section of a config file; absent keys keep their defaults and
/// `scales` follows the length of `channels` unless given.
pub fn model_from_pairs(pairs: &[(String, String)]) -> Result<ModelConfig> {
    let mut model = ModelConfig::default();
    for (k, v) in pairs {
        model.set(k, v)?;
    }
    if !pairs.iter().any(|(k, _)| k == "scales") {
        model.scales = model.channels.len();
    }
    model.validate()?;
    Ok(model)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_loss(value: &str) -> Result<LossKind> {
    match value.to_ascii_lowercase().as_str() {
        "l1" => Ok(LossKind::L1),
        "l2" => Ok(LossKind::L2),
        _ => Err(Error::Usage(format!("invalid value {value:?} for loss (expected l1 or l2)"))),
    }
}

impl TrainConfig {
    /// Parses a config file body. Relative paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let model = model_from_pairs(&pairs)?;
        let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let required =
            |key: &str| get(key).ok_or_else(|| Error::Usage(format!("config is missing required key {key}")));
        let or = |key: &str, default: &str| get(key).unwrap_or(default).to_string();
        let cfg = TrainConfig {
            model,
            loss: parse_loss(&or("loss", "l2"))?,
            batch_size: parse("batch_size", &or("batch_size", "16"))?,
            patch_size: parse("patch_size", &or("patch_size", "128"))?,
            lr: parse("lr", &or("lr", "1e-4"))?,
            lr_halve_at: parse("lr_halve_at", &or("lr_halve_at", "300000"))?,
            lr_extra_decays: match get("lr_extra_decays") {
                None | Some("") => Vec::new(),
                Some(v) => v.split(',').map(|p| parse("lr_extra_decays", p.trim())).collect::<Result<_>>()?,
            },
            max_iters: parse("max_iters", required("max_iters")?)?,
            seed: parse("seed", &or("seed", "0"))?,
            manifest: base.join(required("manifest")?),
            checkpoint_dir: base.join(required("checkpoint_dir")?),
            log_interval: parse("log_interval", &or("log_interval", "100"))?,
            checkpoint_interval: parse("checkpoint_interval", &or("checkpoint_interval", "0"))?,
            resume: get("resume").map(|p| base.join(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&error::read_text(path)?, path.parent().unwrap_or(Path::new("")))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("patch_size", self.patch_size as u64),
            ("log_interval", self.log_interval),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Usage(format!("{key} must be positive")));
            }
        }
        let m = self.model.size_multiple();
        if !self.patch_size.is_multiple_of(m) {
            return Err(Error::Usage(format!(
                "patch_size {} must be divisible by {m} for {} scales",
                self.patch_size, self.model.scales
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Usage(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            loss: self.loss,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            schedule: LrSchedule::new(self.lr, self.lr_halve_at).with_extra_decays(&self.lr_extra_decays),
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "max_iters=10\nmanifest=m.tsv\ncheckpoint_dir=ck\n";

    #[test]
    fn defaults_follow_training_protocol() {
        let c = TrainConfig::from_text(MINIMAL, Path::new("/w")).unwrap();
        assert_eq!((c.batch_size, c.patch_size, c.lr, c.lr_halve_at), (16, 128, 1e-4, 300_000));
        assert_eq!(c.loss, LossKind::L2);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.manifest, Path::new("/w/m.tsv"));
        let s = c.train_options().schedule;
        assert_eq!((s.at(0), s.at(300_000), s.at(1_000_000)), (1e-4, 5e-5, 5e-5));
    }

    #[test]
    fn model_keys_and_scales_follow_channels() {
        let text = format!(
            "{MINIMAL}# micro\nchannels = 8,16,32,64\noffset_channels=8\nin_channels=1\nloss=L1\npatch_size=32\n"
        );
        let c = TrainConfig::from_text(&text, Path::new("")).unwrap();
        assert_eq!(c.model, ModelConfig::micro(1));
        assert_eq!(c.loss, LossKind::L1);
        let c = TrainConfig::from_text(&format!("{MINIMAL}channels=8,16\npatch_size=2\n"), Path::new("")).unwrap();
        assert_eq!(c.model.scales, 2);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = TrainConfig::from_text(&format!("{MINIMAL}learning_rate=1\n"), Path::new("")).unwrap_err();
        assert!(matches!(&err, Error::Usage(m) if m.contains("line 4") && m.contains("learning_rate")), "{err}");
    }

    #[test]
    fn contract_violations() {
        for (text, needle) in [
            ("manifest=m\ncheckpoint_dir=c\n", "max_iters"),
            ("max_iters=1\ncheckpoint_dir=c\n", "manifest"),
            (&format!("{MINIMAL}patch_size=100\n"), "divisible by 8"),
            (&format!("{MINIMAL}batch_size=0\n"), "batch_size must be positive"),
            (&format!("{MINIMAL}seed=1\nseed=2\n"), "repeated"),
            (&format!("{MINIMAL}loss=huber\n"), "loss"),
            ("max_iters\n", "key=value"),
        ] {
            let err = TrainConfig::from_text(text, Path::new("")).unwrap_err().to_string();
            assert!(err.contains(needle), "{needle}: {err}");
        }
    }

    #[test]
    fn extra_decays() {
        let c = TrainConfig::from_text(&format!("{MINIMAL}lr_extra_decays=400000, 500000\n"), Path::new("")).unwrap();
        assert_eq!(c.train_options().schedule.at(500_000), 1.25e-5);
    }
}
