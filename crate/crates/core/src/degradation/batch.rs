//! Training patch pairs.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::image::ImageBuffer;
use super::kernel::DegradationSpec;
use super::synth::{degrade, sample_spec, SpecMode};

/// Where per-image degradations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecSource {
    /// Drawn afresh from a family.
    Sample(SpecMode),
    /// Picked uniformly from a fixed list.
    Fixed(Vec<DegradationSpec>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchConfig {
    /// Images per batch; each contributes two patches.
    pub batch_size: usize,
    /// Side of each LR patch.
    pub lr_patch: usize,
    pub scale: usize,
    pub specs: SpecSource,
    /// Random quarter turns and horizontal flips of the source image.
    pub augment: bool,
}

/// `2B` aligned HR/LR patches; patches `2i` and `2i + 1` come from the
/// same source image and share `specs[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub hr: Vec<ImageBuffer>,
    pub lr: Vec<ImageBuffer>,
    pub specs: Vec<DegradationSpec>,
    /// Pool index of each image.
    pub sources: Vec<usize>,
}

impl TrainBatch {
    pub fn images(&self) -> usize {
        self.specs.len()
    }

    pub fn lr_tensor<T: Scalar>(&self, patch: usize) -> Tensor<T> {
        self.lr[patch].to_tensor()
    }

    pub fn hr_tensor<T: Scalar>(&self, patch: usize) -> Tensor<T> {
        self.hr[patch].to_tensor()
    }
}

fn pick_spec<R: Rng + ?Sized>(rng: &mut R, cfg: &BatchConfig) -> Result<DegradationSpec> {
    match &cfg.specs {
        SpecSource::Sample(mode) => Ok(sample_spec(rng, cfg.scale, *mode)),
        SpecSource::Fixed(list) if list.is_empty() => Err(Error::Config("empty degradation list".into())),
        SpecSource::Fixed(list) => Ok(list[rng.random_range(0..list.len())]),
    }
}

/// Builds one batch. Images smaller than an HR patch are skipped with a
/// warning; an error is returned if none is usable.
pub fn make_batch<R: Rng + ?Sized>(pool: &[ImageBuffer], cfg: &BatchConfig, rng: &mut R) -> Result<TrainBatch> {
    if cfg.batch_size == 0 || cfg.lr_patch == 0 {
        return Err(Error::Config("batch size and patch size must be positive".into()));
    }
    let hr_side = cfg.lr_patch * cfg.scale;
    let usable: Vec<usize> = (0..pool.len())
        .filter(|&i| {
            let ok = pool[i].height() >= hr_side && pool[i].width() >= hr_side;
            if !ok {
                log::warn!(
                    "skipping {}x{} image {i}: smaller than a {hr_side}x{hr_side} patch",
                    pool[i].height(),
                    pool[i].width()
                );
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Data(format!("no image in the pool fits a {hr_side}x{hr_side} patch")));
    }
    let chosen: Vec<usize> = if usable.len() >= cfg.batch_size {
        sample(rng, usable.len(), cfg.batch_size).into_iter().map(|i| usable[i]).collect()
    } else {
        (0..cfg.batch_size).map(|_| usable[rng.random_range(0..usable.len())]).collect()
    };

    let mut batch = TrainBatch {
        hr: Vec::with_capacity(2 * cfg.batch_size),
        lr: Vec::with_capacity(2 * cfg.batch_size),
        specs: Vec::with_capacity(cfg.batch_size),
        sources: chosen.clone(),
    };
    for &idx in &chosen {
        let mut img = pool[idx].to_rgb();
        if cfg.augment {
            img = img.rot90(rng.random_range(0..4));
            if rng.random_bool(0.5) {
                img = img.flip_horizontal();
            }
        }
        let spec = pick_spec(rng, cfg)?;
        let s = cfg.scale;
        for _ in 0..2 {
            let y = s * rng.random_range(0..=(img.height() - hr_side) / s);
            let x = s * rng.random_range(0..=(img.width() - hr_side) / s);
            let hr = img.crop(y, x, hr_side, hr_side)?;
            let lr = degrade(&hr, &spec, rng.random())?;
            batch.hr.push(hr);
            batch.lr.push(lr);
        }
        batch.specs.push(spec);
    }
    Ok(batch)
}
