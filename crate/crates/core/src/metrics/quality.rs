use crate::degradation::{bicubic_upsample, gaussian_kernel_1d, ImageBuffer};
use crate::error::{Error, Result};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_same(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
        return Err(Error::Dimension(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Luma plane with `border` pixels removed on every side.
fn cropped_luma(img: &ImageBuffer, border: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = (img.height(), img.width());
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::Dimension(format!("border {border} leaves nothing of a {h}x{w} image")));
    }
    let y = img.luma();
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let mut out = Vec::with_capacity(ch * cw);
    for r in border..h - border {
        out.extend_from_slice(&y[r * w + border..r * w + w - border]);
    }
    Ok((out, ch, cw))
}

/// PSNR in dB between two planes with peak value 1, capped at [`PSNR_CAP`].
pub fn psnr_planes(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!("plane lengths {} and {}", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// PSNR on the luma channel after removing `border` pixels on each side.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<f64> {
    check_same(a, b)?;
    let (ya, _, _) = cropped_luma(a, border)?;
    let (yb, _, _) = cropped_luma(b, border)?;
    psnr_planes(&ya, &yb)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|i| k[i] * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h x w` planes with dynamic range 1, using an 11x11
/// Gaussian window (sigma 1.5) over every fully covered position.
pub fn ssim_planes(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::Dimension(format!("planes do not hold {h}x{w} values")));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_kernel_1d(SSIM_SIGMA, SSIM_WINDOW);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean SSIM on the luma channel after removing `border` pixels per side.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<f64> {
    check_same(a, b)?;
    let (ya, h, w) = cropped_luma(a, border)?;
    let (yb, _, _) = cropped_luma(b, border)?;
    ssim_planes(&ya, &yb, h, w)
}

/// Bicubic upsampling by `s`; the identity for `s == 1`.
pub fn bicubic_baseline(lr: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    match s {
        0 => Err(Error::Parameter("scale must be positive".into())),
        1 => Ok(lr.clone()),
        _ => bicubic_upsample(lr, s),
    }
}
