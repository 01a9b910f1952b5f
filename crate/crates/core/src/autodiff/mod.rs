//! Reverse-mode differentiation over a closed set of tensor operations.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly,
//! stores its output value, and records which nodes it read. Because nodes
//! are only ever appended after their inputs, the tape is topologically
//! ordered and [`Graph::backward`] is a single reverse sweep.

pub mod gradcheck;
pub mod index;
mod kernels;

use crate::error::{Error, Result};
use crate::scalar::{Layout, Scalar};
use crate::tensor::{numel, Tensor};

use kernels::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Reshape(Var),
    Gather { x: Var, index: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulChannel { x: Var, s: Var },
    MulLast { x: Var, v: Var },
    Scale(Var, T),
    Abs(Var),
    Gelu(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Depthwise { x: Var, w: Var },
    GlobalAvgPool(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    L2Normalize { x: Var, norms: Vec<T> },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Append-only computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{op}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

fn last_dim(op: &str, shape: &[usize]) -> Result<(usize, usize)> {
    let d = *shape.last().ok_or_else(|| Error::dim(format!("{op}: empty shape")))?;
    Ok((numel(shape) / d, d))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Which side of its breakpoint every input to a piecewise-linear op
    /// (`abs`, `leaky_relu`) sits on, in tape order. Two evaluations with
    /// the same pattern lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Abs(x) => out.extend(self.data(x).iter().map(|v| *v >= T::zero())),
                Op::LeakyRelu(x, _) => out.extend(self.data(x).iter().map(|v| *v > T::zero())),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- structural -------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(x)
            )));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// `out[i] = x[index[i]]` with the given output shape.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, out_shape: &[usize]) -> Result<Var> {
        let src = self.data(x);
        if index.len() != numel(out_shape) || index.iter().any(|&i| i >= src.len()) {
            return Err(Error::dim(format!(
                "gather of {} indices into {out_shape:?} from {} values",
                index.len(),
                src.len()
            )));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        Ok(self.push(out_shape.to_vec(), data, Op::Gather { x, index }, &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (shape, idx) = index::permute(self.shape(x), axes)?;
        self.gather(x, idx, &shape)
    }

    fn hwc(&self, op: &str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [h, w, c] => Ok((h, w, c)),
            ref s => Err(Error::dim(format!("{op}: expected [H,W,C], got {s:?}"))),
        }
    }

    fn chw(&self, op: &str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::dim(format!("{op}: expected [C,H,W], got {s:?}"))),
        }
    }

    /// `[H, W, C] -> [H*W/M^2, M^2, C]`.
    pub fn window_partition(&mut self, x: Var, m: usize) -> Result<Var> {
        let (h, w, c) = self.hwc("window_partition", x)?;
        let idx = index::window_partition(h, w, c, m)?;
        self.gather(x, idx, &[h * w / (m * m), m * m, c])
    }

    /// `[H*W/M^2, M^2, C] -> [H, W, C]`.
    pub fn window_reverse(&mut self, x: Var, h: usize, w: usize, m: usize) -> Result<Var> {
        let c = match *self.shape(x) {
            [n, t, c] if n * m * m == h * w && t == m * m => c,
            ref s => {
                return Err(Error::dim(format!(
                    "window_reverse: {s:?} does not tile {h}x{w} with M={m}"
                )))
            }
        };
        let idx = index::window_reverse(h, w, c, m)?;
        self.gather(x, idx, &[h, w, c])
    }

    /// Toroidal roll of `[H, W, C]` by `(dy, dx)`.
    pub fn cyclic_shift(&mut self, x: Var, dy: isize, dx: isize) -> Result<Var> {
        let (h, w, c) = self.hwc("cyclic_shift", x)?;
        let idx = index::roll(h, w, c, dy, dx);
        self.gather(x, idx, &[h, w, c])
    }

    /// `[C*s^2, H, W] -> [C, s*H, s*W]`.
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let (c, h, w) = self.chw("pixel_shuffle", x)?;
        let (shape, idx) = index::pixel_shuffle(c, h, w, s)?;
        self.gather(x, idx, &shape)
    }

    /// `[C, s*H, s*W] -> [C*s^2, H, W]`.
    pub fn pixel_unshuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let (c, h, w) = self.chw("pixel_unshuffle", x)?;
        let (shape, idx) = index::pixel_unshuffle(c, h, w, s)?;
        self.gather(x, idx, &shape)
    }

    /// Reflect-pads `[H, W, C]` at the bottom/right edges.
    pub fn reflect_pad_hw(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Result<Var> {
        let (h, w, c) = self.hwc("reflect_pad_hw", x)?;
        if pad_h == 0 && pad_w == 0 {
            return Ok(x);
        }
        let idx = index::reflect_pad_hw(h, w, c, pad_h, pad_w)?;
        self.gather(x, idx, &[h + pad_h, w + pad_w, c])
    }

    /// Top-left crop of `[H, W, C]`.
    pub fn crop_hw(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w, c) = self.hwc("crop_hw", x)?;
        if out_h > h || out_w > w {
            return Err(Error::dim(format!("crop {out_h}x{out_w} from {h}x{w}")));
        }
        if (out_h, out_w) == (h, w) {
            return Ok(x);
        }
        let idx = index::crop_hw(w, c, out_h, out_w);
        self.gather(x, idx, &[out_h, out_w, c])
    }

    pub fn narrow_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (shape, idx) = index::narrow_last(self.shape(x), start, len)?;
        self.gather(x, idx, &shape)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let block = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(shape, data, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    // ---- elementwise ------------------------------------------------------

    fn zip_with(&self, op: &str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, data, Op::Mul(a, b), &[a, b]))
    }

    /// `x[c, ...] * s[c]`: channel-wise scaling over the leading axis.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        if self.shape(s) != [xs[0]] {
            return Err(Error::dim(format!(
                "mul_channel: {:?} by {:?}",
                xs,
                self.shape(s)
            )));
        }
        let inner = self.value(x).numel() / xs[0];
        let sv = self.data(s);
        let data = self
            .data(x)
            .chunks(inner)
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let shape = xs.to_vec();
        Ok(self.push(shape, data, Op::MulChannel { x, s }, &[x, s]))
    }

    /// `x[..., j] * v[j]`: scaling over the trailing axis.
    pub fn mul_last(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, d) = last_dim("mul_last", self.shape(x))?;
        if self.shape(v) != [d] {
            return Err(Error::dim(format!(
                "mul_last: {:?} by {:?}",
                self.shape(x),
                self.shape(v)
            )));
        }
        let vv = self.data(v);
        let data = self
            .data(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(vv).map(|(&a, &b)| a * b))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::MulLast { x, v }, &[x, v]))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| v * k).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::Scale(x, k), &[x]))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, op, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, Op::Abs(x), T::abs))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::FRAC_1_SQRT_2();
        Ok(self.unary(x, Op::Gelu(x), |v| half * v * (T::one() + (v * inv_sqrt2).erf())))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(self.unary(x, Op::Sigmoid(x), sigmoid))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        Ok(self.unary(x, Op::LeakyRelu(x, slope), |v| if v > T::zero() { v } else { v * slope }))
    }

    // ---- linear algebra ---------------------------------------------------

    /// Affine map over the last axis: `x[..., d_in] @ w[d_in, d_out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, d_in) = last_dim("linear", self.shape(x))?;
        let d_out = match *self.shape(w) {
            [i, o] if i == d_in => o,
            ref s => {
                return Err(Error::dim(format!(
                    "linear: input {:?} with weight {s:?}",
                    self.shape(x)
                )))
            }
        };
        let mut out = vec![T::zero(); rows * d_out];
        if let Some(b) = b {
            let bv = self.data(b);
            if bv.len() != d_out || self.shape(b).len() != 1 {
                return Err(Error::dim(format!("linear: bias {:?} for {d_out}", self.shape(b))));
            }
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(
            rows,
            d_in,
            d_out,
            T::one(),
            self.data(x),
            Layout::Normal,
            self.data(w),
            Layout::Normal,
            T::one(),
            &mut out,
        );
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = d_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(shape, out, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matrix product `a[B, m, k] @ b[B, k, n]`, or with
    /// `trans_b`, `a[B, m, k] @ b[B, n, k]^T`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (batch, m, k, n) = match (self.shape(a), self.shape(b)) {
            (&[ba, m, k], &[bb, r, c]) if ba == bb => {
                let (kk, n) = if trans_b { (c, r) } else { (r, c) };
                if kk != k {
                    return Err(Error::dim(format!("bmm: inner {k} vs {kk}")));
                }
                (ba, m, k, n)
            }
            (sa, sb) => return Err(Error::dim(format!("bmm: {sa:?} with {sb:?}"))),
        };
        let mut out = vec![T::zero(); batch * m * n];
        let (av, bv) = (self.data(a), self.data(b));
        let bl = if trans_b { Layout::Transposed } else { Layout::Normal };
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &av[i * m * k..(i + 1) * m * k],
                Layout::Normal,
                &bv[i * k * n..(i + 1) * k * n],
                bl,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(vec![batch, m, n], out, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    // ---- convolution ------------------------------------------------------

    /// Zero-padded cross-correlation of `x[C_in, H, W]` with
    /// `w[C_out, C_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, wd) = self.chw("conv2d", x)?;
        let (c_out, k) = match *self.shape(w) {
            [o, i, k1, k2] if i == c_in && k1 == k2 => (o, k1),
            ref s => {
                return Err(Error::dim(format!(
                    "conv2d: weight {s:?} for input {:?}",
                    self.shape(x)
                )))
            }
        };
        let geom = ConvGeom::new(c_in, h, wd, k, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d: {k}x{k} kernel on {h}x{wd} (pad {pad})")))?;
        let cols = geom.col_cols();
        let mut out = vec![T::zero(); c_out * cols];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!("conv2d: bias {:?} for {c_out}", self.shape(b))));
            }
            for (row, &bv) in out.chunks_mut(cols).zip(self.data(b)) {
                row.fill(bv);
            }
        }
        let owned;
        let col: &[T] = if geom.is_pointwise() {
            self.data(x)
        } else {
            owned = kernels::im2col(self.data(x), &geom);
            &owned
        };
        T::gemm(
            c_out,
            geom.col_rows(),
            cols,
            T::one(),
            self.data(w),
            Layout::Normal,
            col,
            Layout::Normal,
            T::one(),
            &mut out,
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            vec![c_out, geom.out_h, geom.out_w],
            out,
            Op::Conv2d { x, w, b, geom },
            &inputs,
        ))
    }

    /// One `k x k` kernel per channel, `w[C, 1, k, k]`, padding `(k-1)/2`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, h, wd) = self.chw("depthwise_conv2d", x)?;
        let k = match *self.shape(w) {
            [cc, 1, k1, k2] if cc == c && k1 == k2 && k1 % 2 == 1 => k1,
            ref s => {
                return Err(Error::dim(format!(
                    "depthwise_conv2d: weight {s:?} for input {:?}",
                    self.shape(x)
                )))
            }
        };
        let out = kernels::depthwise_forward(self.data(x), self.data(w), c, h, wd, k);
        Ok(self.push(vec![c, h, wd], out, Op::Depthwise { x, w }, &[x, w]))
    }

    /// Spatial mean of `[C, H, W]`, giving `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw("global_avg_pool", x)?;
        let inv = T::one() / T::lit((h * w) as f64);
        let data = self.data(x).chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(vec![c], data, Op::GlobalAvgPool(x), &[x]))
    }

    // ---- normalisation ----------------------------------------------------

    /// Max-stabilised softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, d) = last_dim("softmax", self.shape(x))?;
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = T::one() / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, d) = last_dim("log_softmax", self.shape(x))?;
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::LogSoftmax(x), &[x]))
    }

    /// Layer normalisation over the last axis with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, d) = last_dim("layer_norm", self.shape(x))?;
        if d < 2 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm: input {:?}, gamma {:?}, beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let inv_d = T::one() / T::lit(d as f64);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut out = Vec::with_capacity(rows * d);
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for row in self.data(x).chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rstd = T::one() / (var + eps).sqrt();
            out.extend(row.iter().zip(g.iter().zip(bt)).map(|(&v, (&gg, &bb))| (v - mean) * rstd * gg + bb));
            means.push(mean);
            rstds.push(rstd);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            &[x, gamma, beta],
        ))
    }

    /// `x / max(||x||, eps)` over the last axis.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let (rows, d) = last_dim("l2_normalize", self.shape(x))?;
        let mut data = self.data(x).to_vec();
        let mut norms = Vec::with_capacity(rows);
        for row in data.chunks_mut(d) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, Op::L2Normalize { x, norms }, &[x]))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        Ok(self.push(vec![1], vec![s], Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.value(x).sum() / T::lit(n as f64);
        Ok(self.push(vec![1], vec![s], Op::Mean(x), &[x]))
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let (_, d) = last_dim("sum_last", self.shape(x))?;
        let data = self.data(x).chunks(d).map(|r| r.iter().copied().sum()).collect();
        let s = self.shape(x);
        let shape = if s.len() == 1 { vec![1] } else { s[..s.len() - 1].to_vec() };
        Ok(self.push(shape, data, Op::SumLast(x), &[x]))
    }

    // ---- reverse pass -----------------------------------------------------

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
                .data_mut(),
        )
    }

    fn acc_scaled(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &[T], k: T) {
        if let Some(dst) = self.slot(grads, v) {
            dst.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * k);
        }
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Every leaf created with `requires_grad` receives a gradient, zero if
    /// the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, g.data(), &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Tensor<T>>]) {
        let one = T::one();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => self.acc_scaled(grads, *x, g, one),
            Op::Gather { x, index } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (&i, &gi) in index.iter().zip(g) {
                        dx[i] += gi;
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let block = self.shape(v)[*axis] * inner;
                    if let Some(dx) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + block];
                            dx[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &s)| *d += s);
                        }
                    }
                    offset += block;
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, g, one);
                self.acc_scaled(grads, *b, g, one);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, g, one);
                self.acc_scaled(grads, *b, g, -one);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::MulChannel { x, s } => {
                let (xv, sv) = (self.data(*x), self.data(*s));
                let inner = xv.len() / sv.len();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((drow, grow), &k) in dx.chunks_mut(inner).zip(g.chunks(inner)).zip(sv) {
                        drow.iter_mut().zip(grow).for_each(|(d, &gi)| *d += gi * k);
                    }
                }
                if let Some(ds) = self.slot(grads, *s) {
                    for ((d, grow), xrow) in ds.iter_mut().zip(g.chunks(inner)).zip(xv.chunks(inner)) {
                        *d += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::MulLast { x, v } => {
                let (xv, vv) = (self.data(*x), self.data(*v));
                let d = vv.len();
                if let Some(dx) = self.slot(grads, *x) {
                    for (drow, grow) in dx.chunks_mut(d).zip(g.chunks(d)) {
                        for ((dd, &gi), &k) in drow.iter_mut().zip(grow).zip(vv) {
                            *dd += gi * k;
                        }
                    }
                }
                if let Some(dv) = self.slot(grads, *v) {
                    for (grow, xrow) in g.chunks(d).zip(xv.chunks(d)) {
                        for ((dd, &gi), &xi) in dv.iter_mut().zip(grow).zip(xrow) {
                            *dd += gi * xi;
                        }
                    }
                }
            }
            Op::Scale(x, k) => self.acc_scaled(grads, *x, g, *k),
            Op::Abs(x) => {
                let xv = self.data(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        if xi > T::zero() {
                            *d += gi;
                        } else if xi < T::zero() {
                            *d -= gi;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.data(*x);
                let half = T::lit(0.5);
                let inv_sqrt2 = T::FRAC_1_SQRT_2();
                let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        let cdf = half * (one + (xi * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-half * xi * xi).exp();
                        *d += gi * (cdf + xi * pdf);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (one - yi);
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.data(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if xi > T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (rows, d_in) = last_dim("linear", self.shape(*x)).expect("recorded");
                let d_out = self.shape(*w)[1];
                let (xv, wv) = (self.data(*x), self.data(*w));
                if let Some(dx) = self.slot(grads, *x) {
                    T::gemm(rows, d_out, d_in, one, g, Layout::Normal, wv, Layout::Transposed, one, dx);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    T::gemm(d_in, rows, d_out, one, xv, Layout::Transposed, g, Layout::Normal, one, dw);
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for row in g.chunks(d_out) {
                            db.iter_mut().zip(row).for_each(|(d, &gi)| *d += gi);
                        }
                    }
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let [batch, m, k] = *self.shape(*a) else { unreachable!() };
                let n = node.value.shape()[2];
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(da) = self.slot(grads, *a) {
                    let bl = if *trans_b { Layout::Normal } else { Layout::Transposed };
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            one,
                            &g[i * m * n..(i + 1) * m * n],
                            Layout::Normal,
                            &bv[i * k * n..(i + 1) * k * n],
                            bl,
                            one,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            T::gemm(n, m, k, one, gi, Layout::Transposed, ai, Layout::Normal, one, dbi);
                        } else {
                            T::gemm(k, m, n, one, ai, Layout::Transposed, gi, Layout::Normal, one, dbi);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let c_out = self.shape(*w)[0];
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let wv = self.data(*w);
                if self.requires_grad(*w) {
                    let owned;
                    let col: &[T] = if geom.is_pointwise() {
                        self.data(*x)
                    } else {
                        owned = kernels::im2col(self.data(*x), geom);
                        &owned
                    };
                    let dw = self.slot(grads, *w).expect("requires grad");
                    T::gemm(c_out, cols, rows, one, g, Layout::Normal, col, Layout::Transposed, one, dw);
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for (d, row) in db.iter_mut().zip(g.chunks(cols)) {
                            *d += row.iter().copied().sum::<T>();
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    if geom.is_pointwise() {
                        T::gemm(rows, c_out, cols, one, wv, Layout::Transposed, g, Layout::Normal, one, dx);
                    } else {
                        let mut dcol = vec![T::zero(); rows * cols];
                        T::gemm(rows, c_out, cols, one, wv, Layout::Transposed, g, Layout::Normal, T::zero(), &mut dcol);
                        kernels::col2im_add(&dcol, geom, dx);
                    }
                }
            }
            Op::Depthwise { x, w } => {
                let [c, h, wd] = *self.shape(*x) else { unreachable!() };
                let k = self.shape(*w)[2];
                let (xv, wv) = (self.data(*x), self.data(*w));
                // Two separate slots cannot be borrowed at once; compute the
                // kernel gradient into a scratch buffer first.
                let mut dw_buf = self.requires_grad(*w).then(|| vec![T::zero(); wv.len()]);
                if self.requires_grad(*x) {
                    let dx = self.slot(grads, *x).expect("requires grad");
                    kernels::depthwise_backward(xv, wv, g, c, h, wd, k, Some(dx), dw_buf.as_deref_mut());
                } else {
                    kernels::depthwise_backward(xv, wv, g, c, h, wd, k, None, dw_buf.as_deref_mut());
                }
                if let Some(buf) = dw_buf {
                    self.acc_scaled(grads, *w, &buf, one);
                }
            }
            Op::GlobalAvgPool(x) => {
                let [_, h, w] = *self.shape(*x) else { unreachable!() };
                let inv = one / T::lit((h * w) as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    for (plane, &gi) in dx.chunks_mut(h * w).zip(g) {
                        plane.iter_mut().for_each(|d| *d += gi * inv);
                    }
                }
            }
            Op::Softmax(x) => {
                let d = *node.value.shape().last().unwrap();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((dd, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let d = *node.value.shape().last().unwrap();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let total: T = grow.iter().copied().sum();
                        for ((dd, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += gi - yi.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let d = *node.value.shape().last().unwrap();
                let xv = self.data(*x);
                let gv = self.data(*gamma);
                let inv_d = one / T::lit(d as f64);
                let xhat = |r: usize, j: usize| (xv[r * d + j] - mean[r]) * rstd[r];
                if let Some(db) = self.slot(grads, *beta) {
                    for grow in g.chunks(d) {
                        db.iter_mut().zip(grow).for_each(|(dd, &gi)| *dd += gi);
                    }
                }
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (r, grow) in g.chunks(d).enumerate() {
                        for (j, (dd, &gi)) in dg.iter_mut().zip(grow).enumerate() {
                            *dd += gi * xhat(r, j);
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, (drow, grow)) in dx.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xhat(r, j);
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            drow[j] += rstd[r] * (dxh - m1 - xhat(r, j) * m2);
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let d = *node.value.shape().last().unwrap();
                let xv = self.data(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, ((drow, grow), yrow)) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)).enumerate()
                    {
                        let n = norms[r];
                        let raw: T = xv[r * d..(r + 1) * d].iter().map(|&v| v * v).sum::<T>().sqrt();
                        let dot: T = if raw >= n {
                            grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum()
                        } else {
                            T::zero()
                        };
                        for ((dd, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += (gi - yi * dot) / n;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = T::lit(self.value(*x).numel() as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::SumLast(x) => {
                let d = *self.shape(*x).last().unwrap();
                if let Some(dx) = self.slot(grads, *x) {
                    for (drow, &gi) in dx.chunks_mut(d).zip(g) {
                        drow.iter_mut().for_each(|dd| *dd += gi);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests;
