//! Planar image buffers and PNG I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Planar `[channels, height, width]` image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("empty image {height}x{width}")));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// `f(c, y, x)` for every pixel.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, pixels)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Grayscale images replicated to three channels; RGB unchanged.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.pixels.len() * 3);
        for _ in 0..3 {
            pixels.extend_from_slice(&self.pixels);
        }
        ImageBuffer {
            channels: 3,
            pixels,
            ..*self
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Data(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    /// Largest top-left crop whose sides are multiples of `s`.
    pub fn crop_to_multiple(&self, s: usize) -> Result<ImageBuffer> {
        let (h, w) = (self.height / s * s, self.width / s * s);
        if h == 0 || w == 0 {
            return Err(Error::Data(format!(
                "{}x{} image is smaller than scale {s}",
                self.height, self.width
            )));
        }
        self.crop(0, 0, h, w)
    }

    /// Counter-clockwise rotation by `k` quarter turns.
    pub fn rot90(&self, k: usize) -> ImageBuffer {
        let (h, w) = (self.height, self.width);
        let res = match k % 4 {
            0 => return self.clone(),
            1 => Self::from_fn(self.channels, w, h, |c, y, x| self.get(c, x, w - 1 - y)),
            2 => Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, h - 1 - y, w - 1 - x)),
            _ => Self::from_fn(self.channels, w, h, |c, y, x| self.get(c, h - 1 - x, y)),
        };
        res.expect("rotation preserves validity")
    }

    pub fn flip_horizontal(&self) -> ImageBuffer {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
        .expect("flip preserves validity")
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![self.channels, self.height, self.width],
            self.pixels.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    /// Inverse of [`ImageBuffer::to_tensor`]; values are not clamped.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<ImageBuffer> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::dim(format!("expected [C,H,W] tensor, got {:?}", t.shape())));
        };
        Self::new(c, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    /// Luma in `[0, 1]` using the ITU-R BT.601 studio-range transform
    /// (`Y` in `[16, 235] / 255`); grayscale images are returned as is.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.iter().map(|&v| v as f64).collect();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..r.len())
            .map(|i| {
                (16.0 + 65.481 * r[i] as f64 + 128.553 * g[i] as f64 + 24.966 * b[i] as f64) / 255.0
            })
            .collect()
    }

    pub fn load_png(path: &Path) -> Result<ImageBuffer> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) => {
                let g = img.to_luma8();
                Self::new(1, h, w, g.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
            }
            _ => {
                let rgb = img.to_rgb8();
                Self::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0)
            }
        }
    }

    /// Writes an 8-bit PNG; values are clamped to `[0, 1]` and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            GrayImage::from_fn(w, h, |x, y| image::Luma([q(self.get(0, y as usize, x as usize))])).save(path)
        } else {
            RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([q(self.get(0, y, x)), q(self.get(1, y, x)), q(self.get(2, y, x))])
            })
            .save(path)
        };
        res.map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(c, h, w, |c, y, x| (c * 100 + y * 10 + x) as f32).unwrap()
    }

    #[test]
    fn rotations_compose() {
        let img = ramp(3, 4, 5);
        let r1 = img.rot90(1);
        assert_eq!((r1.height(), r1.width()), (5, 4));
        // Top-right corner moves to top-left under a counter-clockwise turn.
        assert_eq!(r1.get(0, 0, 0), img.get(0, 0, 4));
        assert_eq!(r1.rot90(3), img);
        assert_eq!(img.rot90(2), img.rot90(1).rot90(1));
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn luma_of_white_and_black() {
        let white = ImageBuffer::filled(3, 2, 2, 1.0).unwrap().luma();
        let black = ImageBuffer::filled(3, 2, 2, 0.0).unwrap().luma();
        assert!((white[0] - 235.0 / 255.0).abs() < 1e-12);
        assert!((black[0] - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn png_roundtrip_is_lossless_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = ImageBuffer::from_fn(c, 6, 7, |c, y, x| ((c * 31 + y * 7 + x * 3) % 256) as f32 / 255.0).unwrap();
            let path = dir.path().join(format!("t{c}.png"));
            img.save_png(&path).unwrap();
            assert_eq!(ImageBuffer::load_png(&path).unwrap(), img);
        }
    }

    #[test]
    fn tensor_roundtrip() {
        let img = ramp(1, 3, 2);
        assert_eq!(ImageBuffer::from_tensor(&img.to_tensor::<f64>()).unwrap(), img);
    }
}
