//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SADN"  u32 version
//! u32 len, UTF-8 metadata: model config, iteration, seed and ADAM settings
//!         as key=value lines
//! u32 record count, then per record:
//!   u32 len, UTF-8 name
//!   u32 rank, rank × u32 dims
//!   product(dims) × f32 data
//! ```
//!
//! Records hold the parameters under their own names, followed by the ADAM
//! moments as `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use sadnet_core::model::{ModelConfig, Sadnet};
use sadnet_core::optim::{AdamConfig, AdamState};
use sadnet_core::params::ParamStore;
use sadnet_core::train::{TrainOptions, Trainer};
use sadnet_core::{Shape, Tensor};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"SADN";
pub const VERSION: u32 = 1;

/// Everything needed to continue a training run or to run inference.
///
/// The random state of a run is fully determined by `seed` and `iteration`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Completed iterations.
    pub iteration: u64,
    pub seed: u64,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Data(format!("checkpoint truncated reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Data(format!("checkpoint {what} at byte {at} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_str(out, name);
    let s = t.shape();
    put_u32(out, 4);
    for d in [s.n, s.c, s.h, s.w] {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn data_err(e: sadnet_core::Error) -> Error {
    Error::Data(format!("checkpoint: {e}"))
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model: t.net.config().clone(),
            iteration: t.iteration,
            seed: t.seed,
            params: t.params.clone(),
            adam: t.adam.clone(),
        }
    }

    /// Resumes training with `opts`; the ADAM state is taken from the file.
    pub fn into_trainer(self, opts: TrainOptions) -> Result<Trainer> {
        let net = Sadnet::new(self.model)?;
        Ok(Trainer { net, params: self.params, adam: self.adam, opts, seed: self.seed, iteration: self.iteration })
    }

    fn metadata(&self) -> String {
        let c = &self.adam.config;
        let mut s = self.model.to_text();
        s.push_str(&format!("iteration={}\nseed={}\n", self.iteration, self.seed));
        s.push_str(&format!(
            "adam_t={}\nadam_lr={}\nadam_beta1={}\nadam_beta2={}\nadam_eps={}\n",
            self.adam.t, c.lr, c.beta1, c.beta2, c.eps
        ));
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.metadata());
        put_u32(&mut out, 3 * self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t);
        }
        for (prefix, moments) in [("adam.m/", &self.adam.m), ("adam.v/", &self.adam.v)] {
            for ((name, _), t) in self.params.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Data("not a checkpoint: missing SADN magic".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let meta = r.string("metadata")?;
        let (mut model_text, mut scalars) = (String::new(), Vec::new());
        for line in meta.lines() {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Data(format!("checkpoint metadata line {line:?}")))?;
            if ModelConfig::KEYS.contains(&k) {
                model_text.push_str(line);
                model_text.push('\n');
            } else {
                scalars.push((k, v));
            }
        }
        let model = ModelConfig::from_text(&model_text).map_err(data_err)?;
        let get = |key: &str| -> Result<&str> {
            scalars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Data(format!("checkpoint metadata is missing {key}")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Data(format!("checkpoint metadata {key}={v:?} is invalid")))
        }
        let adam_config = AdamConfig {
            lr: num("adam_lr", get("adam_lr")?)?,
            beta1: num("adam_beta1", get("adam_beta1")?)?,
            beta2: num("adam_beta2", get("adam_beta2")?)?,
            eps: num("adam_eps", get("adam_eps")?)?,
        };
        let iteration = num("iteration", get("iteration")?)?;
        let seed = num("seed", get("seed")?)?;
        let adam_t = num("adam_t", get("adam_t")?)?;

        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string("record name")?.to_string();
            let rank = r.u32("rank")?;
            if rank != 4 {
                return Err(Error::Data(format!("record {name}: expected rank 4, found {rank}")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dims")? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let n = shape.numel();
            let raw =
                r.take(n.checked_mul(4).ok_or_else(|| Error::Data(format!("record {name} too large")))?, &name)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            records.push((name, Tensor::from_vec(shape, data).map_err(data_err)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Data(format!("trailing bytes after checkpoint records at byte {}", r.pos)));
        }
        if !count.is_multiple_of(3) {
            return Err(Error::Data(format!("checkpoint has {count} records, expected a multiple of 3")));
        }
        let k = count / 3;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for (i, (name, t)) in records.into_iter().enumerate() {
            let (slot, expected) = match i / k {
                0 => (None, name.clone()),
                1 => (Some(&mut m), format!("adam.m/{}", params.name(sadnet_core::params::ParamId(i % k)))),
                _ => (Some(&mut v), format!("adam.v/{}", params.name(sadnet_core::params::ParamId(i % k)))),
            };
            if name != expected {
                return Err(Error::Data(format!("checkpoint record {i}: expected {expected}, found {name}")));
            }
            match slot {
                None => {
                    params.push(name, t).map_err(data_err)?;
                }
                Some(dst) => {
                    if t.shape() != params.tensors()[i % k].shape() {
                        return Err(Error::Data(format!("checkpoint record {name} has shape {}", t.shape())));
                    }
                    dst.push(t);
                }
            }
        }
        Sadnet::new(model.clone())?.check_params(&params).map_err(data_err)?;
        Ok(Checkpoint { model, iteration, seed, params, adam: AdamState { config: adam_config, t: adam_t, m, v } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&error::read(path)?).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fails with one `field: expected X, found Y` entry per differing field.
    pub fn check_model(&self, expected: &ModelConfig) -> Result<()> {
        let diff = expected.diff(&self.model);
        if diff.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = diff.iter().map(ToString::to_string).collect();
        Err(Error::Data(format!("checkpoint was trained with a different model config: {}", lines.join("; "))))
    }
}
