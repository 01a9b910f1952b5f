//! Separable cubic resampling and reflect-padded blur.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::image::ImageBuffer;

/// Cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Reflection of `i` into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Taps and normalised weights for each output sample along one axis.
#[derive(Clone, Debug)]
struct AxisWeights {
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn axis_weights(in_len: usize, out_len: usize, antialias: bool) -> AxisWeights {
    let scale = out_len as f64 / in_len as f64;
    let (kscale, width) = if antialias && scale < 1.0 {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps = width.ceil() as usize + 2;
    let mut index = Vec::with_capacity(out_len * taps);
    let mut weight = Vec::with_capacity(out_len * taps);
    for o in 0..out_len {
        // Pixel-centre alignment, zero-based.
        let u = (o as f64 + 0.5) / scale - 0.5;
        let left = (u - width / 2.0).floor() as isize;
        let start = weight.len();
        for t in 0..taps {
            let j = left + t as isize;
            weight.push(kscale * cubic(kscale * (u - j as f64)));
            index.push(reflect_index(j, in_len));
        }
        let total: f64 = weight[start..].iter().sum();
        for w in &mut weight[start..] {
            *w /= total;
        }
    }
    AxisWeights { taps, index, weight }
}

fn resize_plane(
    src: &[f32],
    h: usize,
    w: usize,
    rows: &AxisWeights,
    cols: &AxisWeights,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let mut tmp = vec![0.0f64; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for ox in 0..out_w {
            let base = ox * cols.taps;
            let mut acc = 0.0;
            for t in 0..cols.taps {
                acc += cols.weight[base + t] * row[cols.index[base + t]] as f64;
            }
            tmp[y * out_w + ox] = acc;
        }
    }
    let mut out = vec![0.0f32; out_h * out_w];
    for oy in 0..out_h {
        let base = oy * rows.taps;
        for ox in 0..out_w {
            let mut acc = 0.0;
            for t in 0..rows.taps {
                acc += rows.weight[base + t] * tmp[rows.index[base + t] * out_w + ox];
            }
            out[oy * out_w + ox] = acc as f32;
        }
    }
    out
}

/// Cubic resize to `out_h x out_w`. With `antialias`, minification widens
/// the kernel by the inverse scale factor.
pub fn bicubic_resize(img: &ImageBuffer, out_h: usize, out_w: usize, antialias: bool) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Data("resize to an empty image".into()));
    }
    let (h, w) = (img.height(), img.width());
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let rows = axis_weights(h, out_h, antialias);
    let cols = axis_weights(w, out_w, antialias);
    let mut pixels = Vec::with_capacity(img.channels() * out_h * out_w);
    for c in 0..img.channels() {
        pixels.extend(resize_plane(img.plane(c), h, w, &rows, &cols, out_h, out_w));
    }
    ImageBuffer::new(img.channels(), out_h, out_w, pixels)
}

/// Anti-aliased cubic downsampling by an integer factor.
pub fn bicubic_downsample(img: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    if s == 0 || img.height() % s != 0 || img.width() % s != 0 {
        return Err(Error::Data(format!(
            "{}x{} image is not divisible by scale {s}",
            img.height(),
            img.width()
        )));
    }
    bicubic_resize(img, img.height() / s, img.width() / s, true)
}

/// Cubic upsampling by an integer factor.
pub fn bicubic_upsample(img: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    if s == 0 {
        return Err(Error::Data("scale must be positive".into()));
    }
    bicubic_resize(img, img.height() * s, img.width() * s, false)
}

fn check_blur_size(img: &ImageBuffer, n: usize) -> Result<()> {
    let r = n / 2;
    if img.height() <= r || img.width() <= r {
        return Err(Error::Data(format!(
            "{}x{} image is too small for a {n}x{n} kernel",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Correlation with a square kernel under reflect padding.
pub fn blur(img: &ImageBuffer, kernel: &Tensor<f64>) -> Result<ImageBuffer> {
    let &[n, n2] = kernel.shape() else {
        return Err(Error::dim(format!("kernel must be square, got {:?}", kernel.shape())));
    };
    if n != n2 || n % 2 == 0 {
        return Err(Error::dim(format!("kernel must be square and odd, got {n}x{n2}")));
    }
    check_blur_size(img, n)?;
    let (h, w) = (img.height(), img.width());
    let r = (n / 2) as isize;
    let k = kernel.data();
    let ys: Vec<Vec<usize>> = (0..h as isize)
        .map(|y| (-r..=r).map(|d| reflect_index(y + d, h)).collect())
        .collect();
    let xs: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-r..=r).map(|d| reflect_index(x + d, w)).collect())
        .collect();
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for c in 0..img.channels() {
        let p = img.plane(c);
        for yi in &ys {
            for xi in &xs {
                let mut acc = 0.0;
                for (ky, &sy) in yi.iter().enumerate() {
                    let row = &p[sy * w..];
                    let krow = &k[ky * n..(ky + 1) * n];
                    for (kx, &sx) in xi.iter().enumerate() {
                        acc += krow[kx] * row[sx] as f64;
                    }
                }
                pixels.push(acc as f32);
            }
        }
    }
    ImageBuffer::new(img.channels(), h, w, pixels)
}

/// [`blur`] for a kernel equal to `outer(k1, k1)`, in two 1-D passes.
pub fn blur_separable(img: &ImageBuffer, k1: &[f64]) -> Result<ImageBuffer> {
    let n = k1.len();
    if n % 2 == 0 {
        return Err(Error::dim(format!("kernel length must be odd, got {n}")));
    }
    check_blur_size(img, n)?;
    let (h, w) = (img.height(), img.width());
    let r = (n / 2) as isize;
    let mut pixels = Vec::with_capacity(img.pixels().len());
    let mut tmp = vec![0.0f64; h * w];
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..h {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (t, &kv) in k1.iter().enumerate() {
                    acc += kv * p[y * w + reflect_index(x + t as isize - r, w)] as f64;
                }
                tmp[y * w + x as usize] = acc;
            }
        }
        for y in 0..h as isize {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k1.iter().enumerate() {
                    acc += kv * tmp[reflect_index(y + t as isize - r, h) * w + x];
                }
                pixels.push(acc as f32);
            }
        }
    }
    ImageBuffer::new(img.channels(), h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // a = -0.5 at x = 0.5: (1.5*0.5 - 2.5)*0.25 + 1
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn reflect_matches_numpy() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn upsample_interpolates_at_integer_phase() {
        // Every s-th output sample sits between inputs; with s = 1 all are exact.
        let img = ImageBuffer::from_fn(1, 5, 6, |_, y, x| (y * 6 + x) as f32 / 30.0).unwrap();
        assert_eq!(bicubic_resize(&img, 5, 6, false).unwrap(), img);
    }

    #[test]
    fn separable_blur_matches_direct() {
        use crate::degradation::kernel::{gaussian_kernel, gaussian_kernel_1d, DegradationSpec};
        let img = ImageBuffer::from_fn(3, 24, 30, |c, y, x| ((c * 7 + y * 3 + x * x) % 17) as f32 / 16.0).unwrap();
        let spec = DegradationSpec::isotropic(1.7, 2, 0.0);
        let a = blur(&img, &gaussian_kernel(&spec).unwrap()).unwrap();
        let b = blur_separable(&img, &gaussian_kernel_1d(1.7, 21)).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_rejects_tiny_images() {
        let img = ImageBuffer::filled(1, 8, 40, 0.5).unwrap();
        assert!(blur_separable(&img, &[0.25, 0.5, 0.25]).is_ok());
        let k = Tensor::full(&[21, 21], 1.0 / 441.0);
        assert!(matches!(blur(&img, &k), Err(Error::Data(_))));
    }
}
