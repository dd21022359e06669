//! The `train` command.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sadnet_core::model::Sadnet;
use sadnet_core::train::{TrainImage, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::manifest::{self, ManifestEntry};
use crate::netpbm;

pub const LOG_FILE: &str = "train.log";
pub const FINAL_CHECKPOINT: &str = "final.sadn";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.sadn";

/// Name of the periodic checkpoint written after `iteration` iterations.
pub fn periodic_checkpoint_name(iteration: u64) -> String {
    format!("iter_{iteration:08}.sadn")
}

/// Loads the clean images of a manifest as `[0, 1]` tensors with their noise
/// levels. All missing files are reported at once.
pub fn load_corpus(entries: &[ManifestEntry], channels: usize, patch_size: usize) -> Result<Vec<TrainImage>> {
    let missing = manifest::missing_files(entries, false);
    if !missing.is_empty() {
        return Err(missing_error(&missing));
    }
    entries
        .iter()
        .map(|e| {
            let img = netpbm::load_image(&e.clean)?;
            if img.channels() != channels {
                return Err(Error::Data(format!(
                    "{}: {} channels, the model expects {channels}",
                    e.clean.display(),
                    img.channels()
                )));
            }
            if img.width() < patch_size || img.height() < patch_size {
                return Err(Error::Data(format!(
                    "{}: {}x{} is smaller than the {patch_size}x{patch_size} patch",
                    e.clean.display(),
                    img.width(),
                    img.height()
                )));
            }
            Ok(TrainImage { clean: img.to_tensor(), sigma: e.sigma })
        })
        .collect()
}

pub(crate) fn missing_error(missing: &[PathBuf]) -> Error {
    let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
    Error::Data(format!("{} missing file(s):\n{}", missing.len(), list.join("\n")))
}

/// What a finished run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// Loss of every iteration run by this invocation.
    pub losses: Vec<f64>,
    pub final_checkpoint: PathBuf,
}

fn checkpoint(trainer: &Trainer, dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    Checkpoint::from_trainer(trainer).save(&path)?;
    Ok(path)
}

/// Trains until `max_iters` iterations are complete.
///
/// Every `log_interval` iterations one record
/// `iteration<TAB>mean_loss<TAB>lr<TAB>wall_seconds` is appended to
/// `train.log` in the checkpoint directory and echoed to `echo`; `mean_loss`
/// averages the iterations since the previous record. A non-finite loss or
/// parameter stops the run after saving the state reached so far as
/// `diagnostic.sadn`.
pub fn run(cfg: &TrainConfig, echo: &mut dyn Write) -> Result<TrainSummary> {
    let dir = &cfg.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut trainer = match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_model(&cfg.model)?;
            ck.into_trainer(cfg.train_options())?
        }
        None => Trainer::new(Sadnet::new(cfg.model.clone())?, cfg.train_options(), cfg.seed)?,
    };
    let corpus = if trainer.iteration < cfg.max_iters {
        load_corpus(&manifest::load(&cfg.manifest)?, cfg.model.in_channels, cfg.patch_size)?
    } else {
        Vec::new()
    };

    let log_path = dir.join(LOG_FILE);
    let mut log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let start = Instant::now();
    let mut losses = Vec::new();
    let mut pending = (0.0, 0u64);
    while trainer.iteration < cfg.max_iters {
        let before = trainer.clone();
        let report = match trainer.step(&corpus) {
            Ok(r) => r,
            Err(sadnet_core::Error::Numeric(msg)) => {
                let path = checkpoint(&before, dir, DIAGNOSTIC_CHECKPOINT)?;
                return Err(Error::Numeric(format!("{msg}; state before the step saved to {}", path.display())));
            }
            Err(e) => return Err(e.into()),
        };
        losses.push(report.loss);
        pending = (pending.0 + report.loss, pending.1 + 1);
        let done = trainer.iteration;
        if done % cfg.log_interval == 0 {
            let record = format!(
                "{done}\t{}\t{}\t{:.3}\n",
                pending.0 / pending.1 as f64,
                report.lr,
                start.elapsed().as_secs_f64()
            );
            log.write_all(record.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
            echo.write_all(record.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
            pending = (0.0, 0);
        }
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.max_iters {
            checkpoint(&trainer, dir, &periodic_checkpoint_name(done))?;
        }
    }
    let final_checkpoint = checkpoint(&trainer, dir, FINAL_CHECKPOINT)?;
    Ok(TrainSummary { losses, final_checkpoint })
}
