//! Transformer layers, mixed blocks and residual groups.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{Conv2d, LayerNorm, Linear, LinearInit};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;

use super::attention::{shift_mask, AttentionOutput, WindowAttention, INIT_STD};
use super::config::DsatConfig;
use super::modulation::{dcl_forward, Modulation, ModulationGenerator};

/// Pre-norm window-attention layer followed by a GELU MLP, both residual.
#[derive(Clone, Debug)]
pub struct SwinLayer {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub shifted: bool,
}

/// Intermediate results of one [`SwinLayer`] pass.
#[derive(Clone, Copy, Debug)]
pub struct SwinTrace {
    pub output: Var,
    pub attention: AttentionOutput,
}

impl SwinLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: &DsatConfig,
        params: &mut ParamSet<T>,
        name: &str,
        shifted: bool,
        rng: &mut R,
    ) -> Self {
        let c = cfg.channels;
        SwinLayer {
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), c),
            attn: WindowAttention::new(params, &format!("{name}.attn"), c, cfg.heads, cfg.window, rng),
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), c),
            fc1: Linear::new(params, &format!("{name}.fc1"), c, cfg.mlp_hidden(), LinearInit::Normal(INIT_STD), rng),
            fc2: Linear::new(params, &format!("{name}.fc2"), cfg.mlp_hidden(), c, LinearInit::Normal(INIT_STD), rng),
            shifted,
        }
    }

    pub fn shift(&self) -> usize {
        if self.shifted {
            self.attn.window / 2
        } else {
            0
        }
    }

    /// `x` is `[H, W, C]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, value_weights: Option<Var>) -> Result<SwinTrace> {
        let (h, w) = (g.shape(x)[0], g.shape(x)[1]);
        let m = self.attn.window;
        let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
        let (hp, wp) = (h + ph, w + pw);

        let y = self.norm1.forward(g, p, x)?;
        let mut y = g.reflect_pad_hw(y, ph, pw)?;
        let s = self.shift();
        if s > 0 {
            y = g.cyclic_shift(y, -(s as isize), -(s as isize))?;
        }
        let windows = g.window_partition(y, m)?;
        let mask = (s > 0).then(|| shift_mask(hp, wp, m, s));
        let attention = self.attn.forward(g, p, windows, value_weights, mask.as_ref())?;
        let mut y = g.window_reverse(attention.output, hp, wp, m)?;
        if s > 0 {
            y = g.cyclic_shift(y, s as isize, s as isize)?;
        }
        let y = g.crop_hw(y, h, w)?;
        let x = g.add(x, y)?;

        let y = self.norm2.forward(g, p, x)?;
        let y = self.fc1.forward(g, p, y)?;
        let y = g.gelu(y)?;
        let y = self.fc2.forward(g, p, y)?;
        let output = g.add(x, y)?;
        Ok(SwinTrace { output, attention })
    }
}

/// Degradation-aware convolution followed by a window-attention layer.
#[derive(Clone, Debug)]
pub struct MixedBlock {
    pub modulation: ModulationGenerator,
    pub swin: SwinLayer,
}

/// How the representation reaches the mixed blocks.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning {
    /// Modulation generated from a `[degradation_dim]` representation.
    Representation(Var),
    /// Zero depthwise kernels and unit channel weights.
    Neutral,
    /// No modulation operations at all: a plain window-attention network.
    Plain,
}

impl MixedBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: &DsatConfig,
        params: &mut ParamSet<T>,
        name: &str,
        shifted: bool,
        rng: &mut R,
    ) -> Self {
        MixedBlock {
            modulation: ModulationGenerator::new(cfg, params, &format!("{name}.modulation"), rng),
            swin: SwinLayer::new(cfg, params, &format!("{name}.swin"), shifted, rng),
        }
    }

    pub fn modulation<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, cond: Conditioning) -> Result<Modulation> {
        match cond {
            Conditioning::Representation(d) => self.modulation.forward(g, p, d),
            Conditioning::Neutral => Ok(self.modulation.neutral(g)),
            Conditioning::Plain => Ok(Modulation {
                kernel: None,
                channel_weights: None,
            }),
        }
    }

    /// `x` is `[C, H, W]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        cond: Conditioning,
        attention_weights: bool,
    ) -> Result<(Var, SwinTrace)> {
        let m = self.modulation(g, p, cond)?;
        let x = match m.kernel {
            Some(k) => dcl_forward(g, x, k, m.channel_weights)?,
            None => x,
        };
        let hwc = g.permute(x, &[1, 2, 0])?;
        let value_weights = if attention_weights { m.channel_weights } else { None };
        let trace = self.swin.forward(g, p, hwc, value_weights)?;
        let out = g.permute(trace.output, &[2, 0, 1])?;
        Ok((out, trace))
    }
}

/// `L` mixed blocks and a 3x3 convolution around a residual connection.
#[derive(Clone, Debug)]
pub struct ResidualGroup {
    pub layers: Vec<MixedBlock>,
    pub conv: Conv2d,
}

impl ResidualGroup {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &DsatConfig, params: &mut ParamSet<T>, name: &str, rng: &mut R) -> Self {
        let layers = (0..cfg.layers)
            .map(|j| MixedBlock::new(cfg, params, &format!("{name}.layers.{j}"), j % 2 == 1, rng))
            .collect();
        ResidualGroup {
            layers,
            conv: Conv2d::new(params, &format!("{name}.conv"), cfg.channels, cfg.channels, 3, 1, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        cond: Conditioning,
        attention_weights: bool,
        traces: &mut Vec<SwinTrace>,
    ) -> Result<Var> {
        let mut y = x;
        for layer in &self.layers {
            let (out, trace) = layer.forward(g, p, y, cond, attention_weights)?;
            traces.push(trace);
            y = out;
        }
        let y = self.conv.forward(g, p, y)?;
        g.add(x, y)
    }
}
