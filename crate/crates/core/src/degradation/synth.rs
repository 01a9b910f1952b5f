//! The degradation pipeline and random degradation sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image::ImageBuffer;
use super::kernel::{
    gaussian_kernel, gaussian_kernel_1d, max_isotropic_sigma, BlurKind, DegradationSpec, MAX_EIGENVALUE,
    MAX_NOISE_SIGMA, MIN_BLUR_WIDTH,
};
use super::resample::{blur, blur_separable, bicubic_downsample};

/// Family of degradations to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecMode {
    /// Isotropic blur, no noise.
    IsotropicNoisefree,
    /// Anisotropic blur plus noise.
    General,
}

/// Blur with the spec's kernel, downsample by its scale, add Gaussian noise
/// and clamp to `[0, 1]`. The noise stream is seeded by `seed` alone.
pub fn degrade(hr: &ImageBuffer, spec: &DegradationSpec, seed: u64) -> Result<ImageBuffer> {
    spec.validate()?;
    let s = spec.scale;
    if hr.height() % s != 0 || hr.width() % s != 0 {
        return Err(Error::Data(format!(
            "{}x{} image is not divisible by scale {s}; crop it first",
            hr.height(),
            hr.width()
        )));
    }
    let r = spec.kernel_size / 2;
    if hr.height() / s <= 1 || hr.width() / s <= 1 || hr.height() <= r || hr.width() <= r {
        return Err(Error::Data(format!(
            "{}x{} image is too small for a {n}x{n} kernel at scale {s}",
            hr.height(),
            hr.width(),
            n = spec.kernel_size
        )));
    }
    let blurred = match spec.blur {
        BlurKind::Isotropic { sigma } => blur_separable(hr, &gaussian_kernel_1d(sigma, spec.kernel_size))?,
        BlurKind::Anisotropic { .. } => blur(hr, &gaussian_kernel(spec)?)?,
    };
    let mut lr = bicubic_downsample(&blurred, s)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_sigma / 255.0).expect("finite noise level");
        for v in lr.pixels_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    lr.clamp01();
    Ok(lr)
}

/// Draws a degradation uniformly from the ranges used for `scale`.
pub fn sample_spec<R: Rng + ?Sized>(rng: &mut R, scale: usize, mode: SpecMode) -> DegradationSpec {
    match mode {
        SpecMode::IsotropicNoisefree => {
            let sigma = rng.random_range(MIN_BLUR_WIDTH..=max_isotropic_sigma(scale));
            DegradationSpec::isotropic(sigma, scale, 0.0)
        }
        SpecMode::General => {
            let lambda1 = rng.random_range(MIN_BLUR_WIDTH..=MAX_EIGENVALUE);
            let lambda2 = rng.random_range(MIN_BLUR_WIDTH..=MAX_EIGENVALUE);
            let theta = rng.random_range(0.0..PI);
            let noise = rng.random_range(0.0..=MAX_NOISE_SIGMA);
            DegradationSpec::anisotropic(lambda1, lambda2, theta, scale, noise)
        }
    }
}

/// Procedural RGB test image built from overlapping rectangles, discs,
/// sinusoidal gratings and a background gradient.
pub fn synthetic_image<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> ImageBuffer {
    enum Shape {
        Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
        Disc { cy: f64, cx: f64, r: f64 },
        Grating { fy: f64, fx: f64, phase: f64, y0: f64, x0: f64, size: f64 },
    }
    let (h, w) = (height as f64, width as f64);
    let bg0: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let bg1: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let angle = rng.random_range(0.0..2.0 * PI);
    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(4..9) {
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let shape = match rng.random_range(0..3) {
            0 => {
                let (y0, x0) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.1..0.6) * h,
                    x1: x0 + rng.random_range(0.1..0.6) * w,
                }
            }
            1 => Shape::Disc {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(0.05..0.3) * h.min(w),
            },
            _ => Shape::Grating {
                fy: rng.random_range(-0.5..0.5),
                fx: rng.random_range(-0.5..0.5),
                phase: rng.random_range(0.0..2.0 * PI),
                y0: rng.random_range(0.0..h),
                x0: rng.random_range(0.0..w),
                size: rng.random_range(0.2..0.5) * h.min(w),
            },
        };
        shapes.push((shape, color));
    }
    let (sa, ca) = angle.sin_cos();
    ImageBuffer::from_fn(3, height, width, |c, y, x| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let t = (((xf / w - 0.5) * ca + (yf / h - 0.5) * sa) + 0.75) / 1.5;
        let mut v = bg0[c] * (1.0 - t) + bg1[c] * t;
        for (shape, color) in &shapes {
            match *shape {
                Shape::Rect { y0, x0, y1, x1 } => {
                    if yf >= y0 && yf < y1 && xf >= x0 && xf < x1 {
                        v = color[c];
                    }
                }
                Shape::Disc { cy, cx, r } => {
                    if (yf - cy).powi(2) + (xf - cx).powi(2) < r * r {
                        v = color[c];
                    }
                }
                Shape::Grating { fy, fx, phase, y0, x0, size } => {
                    if (yf - y0).abs() < size && (xf - x0).abs() < size {
                        let s = 0.5 + 0.5 * (2.0 * PI * (fy * yf + fx * xf) + phase).sin();
                        v = color[c] * s;
                    }
                }
            }
        }
        v.clamp(0.0, 1.0) as f32
    })
    .expect("positive image size")
}

/// Dead-leaves image: occluding discs with i.i.d. colours and radii drawn
/// from a density proportional to `r^-3`, painted front to back until the
/// frame is covered. Every crop has the same statistics, whatever the image.
pub fn dead_leaves_image<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> ImageBuffer {
    let (h, w) = (height as f64, width as f64);
    let r_min = 1.0f64;
    let r_max = (h.min(w) / 4.0).max(2.0);
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    let mut pixels = vec![0.0f32; 3 * height * width];
    let mut covered = vec![false; height * width];
    let mut remaining = height * width;
    while remaining > 0 {
        let r = (a - rng.random::<f64>() * (a - b)).powf(-0.5);
        let cy = rng.random_range(-r..h + r);
        let cx = rng.random_range(-r..w + r);
        let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(height);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * width + x;
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if !covered[i] && dy * dy + dx * dx < r * r {
                    covered[i] = true;
                    remaining -= 1;
                    for (c, v) in color.iter().enumerate() {
                        pixels[c * height * width + i] = *v;
                    }
                }
            }
        }
    }
    ImageBuffer::new(3, height, width, pixels).expect("positive image size")
}

/// Content model for synthetic images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// [`synthetic_image`].
    #[default]
    Shapes,
    /// [`dead_leaves_image`].
    DeadLeaves,
}

/// `count` synthetic images from one seed.
pub fn synthetic_pool(seed: u64, count: usize, height: usize, width: usize) -> Vec<ImageBuffer> {
    synthetic_pool_of(SyntheticKind::Shapes, seed, count, height, width)
}

pub fn synthetic_pool_of(kind: SyntheticKind, seed: u64, count: usize, height: usize, width: usize) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match kind {
            SyntheticKind::Shapes => synthetic_image(&mut rng, height, width),
            SyntheticKind::DeadLeaves => dead_leaves_image(&mut rng, height, width),
        })
        .collect()
}
