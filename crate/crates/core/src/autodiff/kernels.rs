//! Convolution kernels shared by forward and backward passes.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1 stride-1 unpadded convolution reads the input directly.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for output `o` and tap `t`, or `None` in the zero pad.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Unfolds `[C_in, H, W]` into `[C_in*k*k, out_h*out_w]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.col_cols();
    let mut col = vec![T::zero(); g.col_rows() * cols];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[oy * g.out_w + ox] = plane[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
pub fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel `k x k` cross-correlation with zero padding `(k-1)/2`.
pub fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], c: usize, h: usize, wd: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let mut out = vec![T::zero(); c * h * wd];
    for ch in 0..c {
        let plane = &x[ch * h * wd..(ch + 1) * h * wd];
        let kern = &w[ch * k * k..(ch + 1) * k * k];
        let dst = &mut out[ch * h * wd..(ch + 1) * h * wd];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let tap = kern[ky * k + kx];
                if tap == T::zero() {
                    continue;
                }
                let (y0, y1) = valid_range(dy, h);
                let (x0, x1) = valid_range(dx, wd);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let src_row = &plane[sy * wd..(sy + 1) * wd];
                    let dst_row = &mut dst[y * wd..(y + 1) * wd];
                    for xx in x0..x1 {
                        dst_row[xx] += tap * src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`] with respect to input and kernel.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy_all: &[T],
    c: usize,
    h: usize,
    wd: usize,
    k: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let r = (k / 2) as isize;
    for ch in 0..c {
        let plane = &x[ch * h * wd..(ch + 1) * h * wd];
        let grad = &dy_all[ch * h * wd..(ch + 1) * h * wd];
        for ky in 0..k {
            let oy = ky as isize - r;
            for kx in 0..k {
                let ox = kx as isize - r;
                let (y0, y1) = valid_range(oy, h);
                let (x0, x1) = valid_range(ox, wd);
                let tap = w[ch * k * k + ky * k + kx];
                let mut acc = T::zero();
                for y in y0..y1 {
                    let sy = (y as isize + oy) as usize;
                    for xx in x0..x1 {
                        let sx = (xx as isize + ox) as usize;
                        let g = grad[y * wd + xx];
                        acc += g * plane[sy * wd + sx];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[ch * h * wd + sy * wd + sx] += g * tap;
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[ch * k * k + ky * k + kx] += acc;
                }
            }
        }
    }
}

/// Output positions `y` for which `y + offset` lies in `[0, n)`.
#[inline]
fn valid_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_of_strided_conv() {
        let g = ConvGeom::new(3, 48, 48, 3, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (24, 24));
        let g = ConvGeom::new(3, 7, 5, 3, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (7, 5));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 3) % 5) as f64).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
