use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{config_err, Result};

/// Architectural hyperparameters of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// 1 (grayscale) or 3 (color).
    pub in_channels: usize,
    pub scales: usize,
    /// Feature channels per scale, finest first.
    pub channels: Vec<usize>,
    pub resblocks_per_scale: usize,
    pub rsabs_per_scale: usize,
    pub context_dilations: Vec<usize>,
    pub context_compression: usize,
    pub leaky_slope: f64,
    /// Hidden channels of each offset-transfer head.
    pub offset_channels: usize,
    pub kernel_size: usize,
    pub updown_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            scales: 4,
            channels: vec![32, 64, 128, 256],
            resblocks_per_scale: 1,
            rsabs_per_scale: 1,
            context_dilations: vec![1, 2, 3, 4],
            context_compression: 4,
            leaky_slope: 0.2,
            offset_channels: 32,
            kernel_size: 3,
            updown_kernel: 2,
        }
    }
}

/// One field that differs between two configurations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDiff {
    pub field: &'static str,
    pub expected: String,
    pub found: String,
}

impl core::fmt::Display for FieldDiff {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: expected {}, found {}", self.field, self.expected, self.found)
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| config_err!("invalid value {value:?} for {key}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl ModelConfig {
    /// Field names in canonical order.
    pub const KEYS: [&'static str; 11] = [
        "in_channels",
        "scales",
        "channels",
        "resblocks_per_scale",
        "rsabs_per_scale",
        "context_dilations",
        "context_compression",
        "leaky_slope",
        "offset_channels",
        "kernel_size",
        "updown_kernel",
    ];

    /// Desk-scale preset: channels `[8, 16, 32, 64]`, one block per scale.
    pub fn micro(in_channels: usize) -> Self {
        ModelConfig { in_channels, channels: vec![8, 16, 32, 64], offset_channels: 8, ..Self::default() }
    }

    /// Context block with dilation rates `[1, 2, 4, 8]`.
    pub fn dilations_1248() -> Self {
        ModelConfig { context_dilations: vec![1, 2, 4, 8], ..Self::default() }
    }

    /// Sets `channels` and keeps `scales` consistent with it.
    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        self.channels = channels.to_vec();
        self.scales = channels.len();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(config_err!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.scales == 0 || self.channels.len() != self.scales {
            return Err(config_err!("channels lists {} scales but scales = {}", self.channels.len(), self.scales));
        }
        if self.channels.contains(&0) {
            return Err(config_err!("channels must all be positive: {}", list(&self.channels)));
        }
        if self.rsabs_per_scale == 0 {
            return Err(config_err!("rsabs_per_scale must be positive"));
        }
        if self.context_dilations.is_empty() || self.context_dilations.contains(&0) {
            return Err(config_err!("context_dilations must be positive: {}", list(&self.context_dilations)));
        }
        let coarse = self.channels[self.scales - 1];
        if self.context_compression == 0 || !coarse.is_multiple_of(self.context_compression) {
            return Err(config_err!(
                "context_compression {} does not divide the coarsest channel count {coarse}",
                self.context_compression
            ));
        }
        if self.offset_channels == 0 {
            return Err(config_err!("offset_channels must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(config_err!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.updown_kernel != 2 {
            return Err(config_err!("updown_kernel must be 2, got {}", self.updown_kernel));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(config_err!("leaky_slope must be finite and non-negative"));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    /// Kernel taps `K` of the deformable convolutions.
    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// `(key, value)` pairs in canonical order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.in_channels.to_string(),
            self.scales.to_string(),
            list(&self.channels),
            self.resblocks_per_scale.to_string(),
            self.rsabs_per_scale.to_string(),
            list(&self.context_dilations),
            self.context_compression.to_string(),
            format!("{}", self.leaky_slope),
            self.offset_channels.to_string(),
            self.kernel_size.to_string(),
            self.updown_kernel.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Updates one field from its textual value. Returns `Ok(false)` for a
    /// key that is not a model field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "in_channels" => self.in_channels = parse(key, value)?,
            "scales" => self.scales = parse(key, value)?,
            "channels" => self.channels = parse_list(key, value)?,
            "resblocks_per_scale" => self.resblocks_per_scale = parse(key, value)?,
            "rsabs_per_scale" => self.rsabs_per_scale = parse(key, value)?,
            "context_dilations" => self.context_dilations = parse_list(key, value)?,
            "context_compression" => self.context_compression = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "offset_channels" => self.offset_channels = parse(key, value)?,
            "kernel_size" => self.kernel_size = parse(key, value)?,
            "updown_kernel" => self.updown_kernel = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical `key=value` lines, LF-terminated.
    pub fn to_text(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses [`to_text`](Self::to_text) output; every field must be present.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| config_err!("malformed config line {line:?}"))?;
            let k = k.trim();
            if !cfg.set(k, v.trim())? {
                return Err(config_err!("unknown model field {k}"));
            }
            seen.push(String::from(k));
        }
        if let Some(missing) = Self::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(config_err!("model config is missing {missing}"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields where `other` differs from `self`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<FieldDiff> {
        self.fields()
            .into_iter()
            .zip(other.fields())
            .filter(|((_, a), (_, b))| a != b)
            .map(|((field, expected), (_, found))| FieldDiff { field, expected, found })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_structural_constants() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.channels, [32, 64, 128, 256]);
        assert_eq!(c.context_dilations, [1, 2, 3, 4]);
        assert_eq!(c.context_compression, 4);
        assert_eq!((c.kernel_size, c.updown_kernel), (3, 2));
        assert_eq!(ModelConfig::dilations_1248().context_dilations, [1, 2, 4, 8]);
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig { leaky_slope: 0.1, ..ModelConfig::micro(1) };
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn diff_names_fields() {
        let a = ModelConfig::default();
        let b = ModelConfig::micro(3);
        let d = a.diff(&b);
        let names: Vec<_> = d.iter().map(|f| f.field).collect();
        assert_eq!(names, ["channels", "offset_channels"]);
        assert_eq!(d[0].to_string(), "channels: expected 32,64,128,256, found 8,16,32,64");
    }

    #[test]
    fn validation_failures() {
        let bad = [
            ModelConfig { in_channels: 2, ..Default::default() },
            ModelConfig { scales: 3, ..Default::default() },
            ModelConfig { context_compression: 3, ..Default::default() },
            ModelConfig { channels: vec![32, 0, 128, 256], ..Default::default() },
            ModelConfig { kernel_size: 2, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(crate::Error::Config(_))), "{c:?}");
        }
    }
}
