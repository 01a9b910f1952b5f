//! Window self-attention with relative position bias and optional channel
//! weights on the values.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, LinearInit};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive logit for token pairs that straddle a shifted-window seam.
pub const MASK_VALUE: f64 = -1e4;

/// Std of the truncated-normal-like initialisation of transformer weights.
pub const INIT_STD: f64 = 0.02;

/// Index into the `(2M-1)^2` bias table for every query/key pair of an
/// `M x M` window, row-major over `(query, key)`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m;
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (iy, ix) = (i / m, i % m);
        for j in 0..n {
            let (jy, jx) = (j / m, j % m);
            idx.push((iy + m - 1 - jy) * span + (ix + m - 1 - jx));
        }
    }
    idx
}

/// `[nW, M^2, M^2]` additive mask for windows of an `h x w` map that was
/// rolled by `-shift` in both directions.
pub fn shift_mask(h: usize, w: usize, m: usize, shift: usize) -> Tensor<f64> {
    let region = |v: usize, len: usize| -> usize {
        if v < len - m {
            0
        } else if v < len - shift {
            1
        } else {
            2
        }
    };
    let (wy, wx) = (h / m, w / m);
    let n = m * m;
    let mut data = Vec::with_capacity(wy * wx * n * n);
    for by in 0..wy {
        for bx in 0..wx {
            let label: Vec<usize> = (0..n)
                .map(|t| 3 * region(by * m + t / m, h) + region(bx * m + t % m, w))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    data.push(if label[i] == label[j] { 0.0 } else { MASK_VALUE });
                }
            }
        }
    }
    Tensor::new(&[wy * wx, n, n], data).expect("mask extents")
}

#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub bias_table: ParamId,
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
}

/// Attention output together with the probabilities it used,
/// `[heads * nW, M^2, M^2]`, head-major.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub probs: Var,
}

impl WindowAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        rng: &mut R,
    ) -> Self {
        let span = 2 * window - 1;
        WindowAttention {
            qkv: Linear::new(params, &format!("{name}.qkv"), channels, 3 * channels, LinearInit::Normal(INIT_STD), rng),
            proj: Linear::new(params, &format!("{name}.proj"), channels, channels, LinearInit::Normal(INIT_STD), rng),
            bias_table: params.add(
                format!("{name}.relative_bias"),
                Tensor::randn(&[span * span, heads], INIT_STD, rng),
            ),
            channels,
            heads,
            window,
        }
    }

    /// `x` is `[nW, M^2, C]`; `value_weights`, when given, is a `[C]` vector
    /// whose `h`-th slice of length `C / heads` scales the values of head `h`.
    /// `mask` is `[nW, M^2, M^2]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        value_weights: Option<Var>,
        mask: Option<&Tensor<f64>>,
    ) -> Result<AttentionOutput> {
        let (nw, n, c) = match *g.shape(x) {
            [a, b, c] => (a, b, c),
            ref s => return Err(Error::dim(format!("attention input must be [nW, N, C], got {s:?}"))),
        };
        if c != self.channels || n != self.window * self.window {
            return Err(Error::dim(format!(
                "attention built for {}x{} windows of {} channels, got {n} tokens of {c}",
                self.window, self.window, self.channels
            )));
        }
        let (heads, d) = (self.heads, c / self.heads);
        let qkv = self.qkv.forward(g, p, x)?;
        let q = g.narrow_last(qkv, 0, c)?;
        let k = g.narrow_last(qkv, c, c)?;
        let mut v = g.narrow_last(qkv, 2 * c, c)?;
        if let Some(wv) = value_weights {
            if g.shape(wv) != [c] {
                return Err(Error::dim(format!("value weights must be [{c}], got {:?}", g.shape(wv))));
            }
            v = g.mul_last(v, wv)?;
        }
        let split = |g: &mut Graph<T>, t: Var| -> Result<Var> {
            let t = g.reshape(t, &[nw, n, heads, d])?;
            let t = g.permute(t, &[2, 0, 1, 3])?;
            g.reshape(t, &[heads * nw, n, d])
        };
        let q = split(g, q)?;
        let k = split(g, k)?;
        let v = split(g, v)?;
        let q = g.scale(q, T::lit(1.0 / (d as f64).sqrt()))?;
        let mut scores = g.bmm(q, k, true)?;

        let rel = relative_position_index(self.window);
        let mut bias_idx = Vec::with_capacity(heads * nw * n * n);
        for h in 0..heads {
            for _ in 0..nw {
                bias_idx.extend(rel.iter().map(|&r| r * heads + h));
            }
        }
        let bias = g.gather(p[self.bias_table], bias_idx, &[heads * nw, n, n])?;
        scores = g.add(scores, bias)?;
        if let Some(mask) = mask {
            if mask.shape() != [nw, n, n] {
                return Err(Error::dim(format!("mask must be [{nw}, {n}, {n}], got {:?}", mask.shape())));
            }
            let mut full = Vec::with_capacity(heads * mask.numel());
            for _ in 0..heads {
                full.extend(mask.data().iter().map(|&v| T::lit(v)));
            }
            let mask = g.constant(Tensor::new(&[heads * nw, n, n], full)?);
            scores = g.add(scores, mask)?;
        }
        let probs = g.softmax(scores)?;
        let out = g.bmm(probs, v, false)?;
        let out = g.reshape(out, &[heads, nw, n, d])?;
        let out = g.permute(out, &[1, 2, 0, 3])?;
        let out = g.reshape(out, &[nw, n, c])?;
        let output = self.proj.forward(g, p, out)?;
        Ok(AttentionOutput { output, probs })
    }
}
