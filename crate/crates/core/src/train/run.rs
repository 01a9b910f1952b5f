//! Training runs with on-disk artifacts.
//!
//! An output directory holds:
//!
//! | file | contents |
//! |------|----------|
//! | `config.toml` | resolved configuration of the run |
//! | `encoder_metrics.csv` | `step,epoch,lr,l_degrad,positive_cosine,cross_cosine` |
//! | `encoder.ckpt` | encoder state after pretraining |
//! | `metrics.csv` | `step,epoch,lr,l_sr,l_degrad,l_total`; `l_degrad` is empty when the contrastive term is off |
//! | `step_NNNNNN.ckpt` | periodic joint-training checkpoints |
//! | `model.ckpt` | final state |

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::degradation::ImageBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::trainer::{EncoderStats, JointStats, Parts, TrainState};

pub const CONFIG_FILE: &str = "config.toml";
pub const ENCODER_METRICS: &str = "encoder_metrics.csv";
pub const ENCODER_CHECKPOINT: &str = "encoder.ckpt";
pub const METRICS: &str = "metrics.csv";
pub const MODEL_CHECKPOINT: &str = "model.ckpt";

pub const ENCODER_HEADER: [&str; 6] = ["step", "epoch", "lr", "l_degrad", "positive_cosine", "cross_cosine"];
pub const JOINT_HEADER: [&str; 6] = ["step", "epoch", "lr", "l_sr", "l_degrad", "l_total"];

pub fn periodic_checkpoint(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Opens a metrics log that continues at `next_step`: rows from later steps
/// of an earlier run are dropped, so a resumed log matches an uninterrupted one.
fn open_log(path: &Path, header: &[&str], next_step: u64) -> Result<csv::Writer<File>> {
    let mut kept = Vec::new();
    if next_step > 0 && path.exists() {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        for row in r.records() {
            let row = row.map_err(|e| csv_err(path, e))?;
            let step: u64 = row
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: malformed step column", path.display())))?;
            if step < next_step {
                kept.push(row);
            }
        }
    }
    let f = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in kept {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    Ok(w)
}

pub fn save_state<T: Scalar>(state: &TrainState<T>, path: &Path, parts: Parts) -> Result<()> {
    let records = state.records(parts)?;
    checkpoint::save(path, records.iter().map(|(n, t)| (n.as_str(), t)))
}

pub fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&dir.join(CONFIG_FILE))
}

/// Contrastive pretraining up to `cfg.train.encoder_steps()`, logging every
/// step and writing the encoder checkpoint at the end.
pub fn run_encoder<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &RunConfig,
    pool: &[ImageBuffer],
    dir: &Path,
) -> Result<Vec<EncoderStats>> {
    let path = dir.join(ENCODER_METRICS);
    let mut log = open_log(&path, &ENCODER_HEADER, state.encoder_step)?;
    let total = cfg.train.encoder_steps();
    let mut out = Vec::new();
    while state.encoder_step < total {
        let s = state.encoder_step(cfg, pool)?;
        log.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.lr.to_string(),
            s.l_degrad.to_string(),
            s.positive_cosine.to_string(),
            s.cross_cosine.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
        if s.step % 50 == 0 || s.step + 1 == total {
            log::info!(
                "encoder step {}/{total}: l_degrad {:.4}, cos+ {:.3}, cos× {:.3}",
                s.step + 1,
                s.l_degrad,
                s.positive_cosine,
                s.cross_cosine
            );
        }
        out.push(s);
    }
    log.flush().map_err(|e| Error::io(&path, e))?;
    save_state(state, &dir.join(ENCODER_CHECKPOINT), Parts::EncoderOnly)?;
    Ok(out)
}

/// Joint training up to `cfg.train.total_steps()` with periodic and final
/// checkpoints.
pub fn run_joint<T: Scalar>(
    state: &mut TrainState<T>,
    cfg: &RunConfig,
    pool: &[ImageBuffer],
    dir: &Path,
) -> Result<Vec<JointStats>> {
    let path = dir.join(METRICS);
    let mut log = open_log(&path, &JOINT_HEADER, state.step)?;
    let total = cfg.train.total_steps();
    let every = cfg.train.checkpoint_every;
    let mut out = Vec::new();
    while state.step < total {
        let s = state.joint_step(cfg, pool)?;
        log.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.lr.to_string(),
            s.l_sr.to_string(),
            s.l_degrad.map(|v| v.to_string()).unwrap_or_default(),
            s.l_total.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
        if s.step % 50 == 0 || s.step + 1 == total {
            log::info!("step {}/{total}: l_sr {:.5}, lr {:.2e}", s.step + 1, s.l_sr, s.lr);
        }
        if every > 0 && state.step % every == 0 && state.step < total {
            log.flush().map_err(|e| Error::io(&path, e))?;
            save_state(state, &periodic_checkpoint(dir, state.step), Parts::All)?;
        }
        out.push(s);
    }
    log.flush().map_err(|e| Error::io(&path, e))?;
    save_state(state, &dir.join(MODEL_CHECKPOINT), Parts::All)?;
    Ok(out)
}
