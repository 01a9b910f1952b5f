use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, RunConfig};
use crate::degradation::{synthetic_pool_of, BatchConfig, ImageBuffer, SpecSource};
use crate::error::{Error, Result};

/// Reads a newline-separated list of paths. Blank lines and lines starting
/// with `#` are ignored; relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no images", path.display())));
    }
    Ok(entries)
}

/// Loads every image listed in a manifest, in order.
pub fn load_manifest_images(path: &Path) -> Result<Vec<(PathBuf, ImageBuffer)>> {
    read_manifest(path)?
        .into_iter()
        .map(|p| ImageBuffer::load_png(&p).map(|img| (p, img)))
        .collect()
}

/// The training pool: manifest images, or the seeded synthetic set.
pub fn training_pool(data: &DataConfig, seed: u64) -> Result<Vec<ImageBuffer>> {
    match &data.manifest {
        Some(m) => Ok(load_manifest_images(m)?.into_iter().map(|(_, img)| img.to_rgb()).collect()),
        None => Ok(synthetic_pool_of(
            data.synthetic_kind,
            seed,
            data.synthetic_images,
            data.synthetic_size,
            data.synthetic_size,
        )),
    }
}

pub fn batch_config(cfg: &RunConfig) -> BatchConfig {
    BatchConfig {
        batch_size: cfg.train.batch_size,
        lr_patch: cfg.data.lr_patch,
        scale: cfg.model.scale,
        specs: if cfg.data.specs.is_empty() {
            SpecSource::Sample(cfg.data.spec_mode)
        } else {
            SpecSource::Fixed(cfg.data.specs.clone())
        },
        augment: cfg.data.augment,
    }
}

/// Independent random streams for the phases of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init = 0,
    Encoder = 1,
    Joint = 2,
    Eval = 3,
}

/// Generator for `step` of `phase`; depends on nothing else, so a resumed
/// run sees exactly the batches an uninterrupted one would.
pub fn phase_rng(seed: u64, phase: Phase, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase as u64) << 56) | step);
    rng
}
