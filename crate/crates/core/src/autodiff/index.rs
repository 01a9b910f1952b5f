//! Index maps for structural tensor operations.
//!
//! Every layout change (axis permutation, window partitioning, cyclic
//! shifts, pixel shuffling, padding, cropping, slicing) is expressed as a
//! gather: `out[i] = x[index[i]]`. The gradient of a gather is the matching
//! scatter-add, so all of these share one backward rule.

use crate::error::{Error, Result};

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather map for `out = x.permute(axes)`.
pub fn permute(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::dim(format!("invalid permutation {axes:?} for rank {rank}")));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let moved: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut index = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        index.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += moved[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= moved[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    Ok((out_shape, index))
}

/// `[H, W, C]` into `[H*W/M^2, M^2, C]`, windows in raster order.
pub fn window_partition(h: usize, w: usize, c: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!("{h}x{w} is not divisible into {m}x{m} windows")));
    }
    let (wy, wx) = (h / m, w / m);
    let mut index = Vec::with_capacity(h * w * c);
    for by in 0..wy {
        for bx in 0..wx {
            for iy in 0..m {
                for ix in 0..m {
                    let base = ((by * m + iy) * w + bx * m + ix) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    Ok(index)
}

/// Inverse of [`window_partition`]: `[nW, M^2, C]` back to `[H, W, C]`.
pub fn window_reverse(h: usize, w: usize, c: usize, m: usize) -> Result<Vec<usize>> {
    let forward = window_partition(h, w, c, m)?;
    let mut index = vec![0; forward.len()];
    for (src, &dst) in forward.iter().enumerate() {
        index[dst] = src;
    }
    Ok(index)
}

/// Toroidal roll of `[H, W, C]`: the element at `(y, x)` moves to
/// `(y + dy, x + dx)` modulo the extents.
pub fn roll(h: usize, w: usize, c: usize, dy: isize, dx: isize) -> Vec<usize> {
    let mut index = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
        for x in 0..w {
            let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
            let base = (sy * w + sx) * c;
            index.extend(base..base + c);
        }
    }
    index
}

/// `[C*s^2, H, W]` to `[C, H*s, W*s]`.
pub fn pixel_shuffle(c_in: usize, h: usize, w: usize, s: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if s == 0 || c_in % (s * s) != 0 {
        return Err(Error::dim(format!("{c_in} channels not divisible by {s}^2")));
    }
    let c = c_in / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut index = Vec::with_capacity(c_in * h * w);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let src_c = ch * s * s + (y % s) * s + (x % s);
                index.push((src_c * h + y / s) * w + x / s);
            }
        }
    }
    Ok((vec![c, oh, ow], index))
}

/// `[C, H*s, W*s]` to `[C*s^2, H, W]`, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(c: usize, h: usize, w: usize, s: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::dim(format!("{h}x{w} not divisible by {s}")));
    }
    let (ih, iw) = (h / s, w / s);
    let (_, fwd) = pixel_shuffle(c * s * s, ih, iw, s)?;
    let mut index = vec![0; fwd.len()];
    for (dst, &src) in fwd.iter().enumerate() {
        index[src] = dst;
    }
    Ok((vec![c * s * s, ih, iw], index))
}

/// Mirror index without edge repetition (`-1 -> 1`, `n -> n-2`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r as usize
}

/// Reflect-pads `[H, W, C]` at the bottom and right edges.
pub fn reflect_pad_hw(h: usize, w: usize, c: usize, pad_h: usize, pad_w: usize) -> Result<Vec<usize>> {
    if pad_h >= h.max(2) || pad_w >= w.max(2) {
        return Err(Error::dim(format!(
            "reflect padding ({pad_h},{pad_w}) too large for {h}x{w}"
        )));
    }
    let mut index = Vec::with_capacity((h + pad_h) * (w + pad_w) * c);
    for y in 0..h + pad_h {
        let sy = reflect(y as isize, h);
        for x in 0..w + pad_w {
            let base = (sy * w + reflect(x as isize, w)) * c;
            index.extend(base..base + c);
        }
    }
    Ok(index)
}

/// Top-left `out_h x out_w` crop of `[H, W, C]`.
pub fn crop_hw(w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        for x in 0..out_w {
            let base = (y * w + x) * c;
            index.extend(base..base + c);
        }
    }
    index
}

/// Slice `[start, start + len)` of the last axis.
pub fn narrow_last(shape: &[usize], start: usize, len: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let d = *shape.last().ok_or_else(|| Error::dim("narrow on empty shape"))?;
    if len == 0 || start + len > d {
        return Err(Error::dim(format!("slice {start}..{} out of range {d}", start + len)));
    }
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = len;
    let mut index = Vec::with_capacity(rows * len);
    for r in 0..rows {
        index.extend(r * d + start..r * d + start + len);
    }
    Ok((out_shape, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let (shape, idx) = permute(&[2, 3], &[1, 0]).unwrap();
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(idx, vec![0, 3, 1, 4, 2, 5]);
        assert!(permute(&[2, 3], &[0, 0]).is_err());
    }

    #[test]
    fn single_window_is_flattening() {
        let idx = window_partition(4, 4, 2, 4).unwrap();
        assert_eq!(idx, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn reflect_is_numpy_reflect() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn pixel_shuffle_shape_law() {
        let (shape, idx) = pixel_shuffle(4, 2, 2, 2).unwrap();
        assert_eq!(shape, vec![1, 4, 4]);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        assert!(pixel_shuffle(3, 2, 2, 2).is_err());
    }
}
