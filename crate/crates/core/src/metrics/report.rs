use std::path::Path;

use rand::Rng;

use crate::degradation::{degrade, DegradationSpec, ImageBuffer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::{phase_rng, Models, Phase};

use super::quality::{bicubic_baseline, psnr, ssim};
use super::separability::{separability, MIN_CLUSTER_SIZE};

pub const REPORT_HEADER: [&str; 7] = [
    "image",
    "spec",
    "psnr_y",
    "ssim_y",
    "bicubic_psnr_y",
    "bicubic_ssim_y",
    "separability",
];

/// Scores of one image under one degradation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image: String,
    pub spec: DegradationSpec,
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageScore>,
    /// Silhouette of the LR embeddings grouped by spec; `None` with fewer
    /// than two specs or too few images per spec.
    pub separability: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_bicubic_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.bicubic_psnr))
    }

    pub fn mean_bicubic_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.bicubic_ssim))
    }

    /// One row per (image, spec) and a final `mean` row carrying the
    /// separability score.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("writing report: {e}"));
        let mut w = csv::Writer::from_writer(w);
        w.write_record(REPORT_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.image.clone(),
                r.spec.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
                r.bicubic_psnr.to_string(),
                r.bicubic_ssim.to_string(),
                String::new(),
            ])
            .map_err(err)?;
        }
        w.write_record([
            "mean".to_string(),
            String::new(),
            self.mean_psnr().to_string(),
            self.mean_ssim().to_string(),
            self.mean_bicubic_psnr().to_string(),
            self.mean_bicubic_ssim().to_string(),
            self.separability.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| Error::Data(format!("writing report: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Degrades every image with every spec, super-resolves it and scores the
/// result against the original on luma with a `scale`-pixel border crop.
/// Images are converted to RGB and cropped to a multiple of the scale; the
/// noise of image `i` under spec `k` is seeded from `(seed, k * n + i)`.
pub fn evaluate<T: Scalar>(
    models: &Models<T>,
    images: &[(String, ImageBuffer)],
    specs: &[DegradationSpec],
    seed: u64,
) -> Result<EvalReport> {
    let scale = models.net.config.scale;
    if images.is_empty() || specs.is_empty() {
        return Err(Error::Data("evaluation needs at least one image and one spec".into()));
    }
    let mut rows = Vec::new();
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        if spec.scale != scale {
            return Err(Error::Config(format!("spec scale {} differs from model scale {scale}", spec.scale)));
        }
        for (i, (name, img)) in images.iter().enumerate() {
            let hr = img.to_rgb().crop_to_multiple(scale)?;
            let noise_seed: u64 = phase_rng(seed, Phase::Eval, (k * images.len() + i) as u64).random();
            let lr = degrade(&hr, spec, noise_seed)?;
            let mut sr = models.super_resolve(&lr)?;
            sr.clamp01();
            if !sr.pixels().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("{name}: non-finite network output")));
            }
            let mut bic = bicubic_baseline(&lr, scale)?;
            bic.clamp01();
            rows.push(ImageScore {
                image: name.clone(),
                spec: *spec,
                psnr: psnr(&sr, &hr, scale)?,
                ssim: ssim(&sr, &hr, scale)?,
                bicubic_psnr: psnr(&bic, &hr, scale)?,
                bicubic_ssim: ssim(&bic, &hr, scale)?,
            });
            let (_, emb) = models.represent(&lr.to_tensor())?;
            embeddings.push(emb.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>());
            labels.push(k);
        }
    }
    let separability = if specs.len() >= 2 && images.len() >= MIN_CLUSTER_SIZE {
        match separability(&embeddings, &labels) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("separability not computed: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(EvalReport { rows, separability })
}
