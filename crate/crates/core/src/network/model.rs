use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::block::{Conditioning, ResidualGroup, SwinTrace};
use super::config::DsatConfig;

/// Per-channel RGB mean removed from the input and restored on the output.
pub const RGB_MEAN: [f64; 3] = [0.4488, 0.4371, 0.4040];

fn mean_image<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(&[3, h, w], |i| T::lit(RGB_MEAN[i / (h * w)]))
}

/// The super-resolution network: shallow convolution, residual groups of
/// degradation-modulated mixed blocks, and a pixel-shuffle head, all
/// operating on mean-centred colours.
#[derive(Clone, Debug)]
pub struct DsatNet {
    pub config: DsatConfig,
    pub shallow: Conv2d,
    pub groups: Vec<ResidualGroup>,
    pub body_conv: Conv2d,
    pub upsample: Vec<(Conv2d, usize)>,
    pub last: Conv2d,
}

/// Output of [`DsatNet::forward_traced`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    pub shallow: Var,
    pub deep: Var,
    pub layers: Vec<SwinTrace>,
}

impl DsatNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: &DsatConfig, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let shallow = Conv2d::new(params, "shallow", 3, c, 3, 1, rng);
        let groups = (0..config.blocks)
            .map(|i| ResidualGroup::new(config, params, &format!("groups.{i}"), rng))
            .collect();
        let body_conv = Conv2d::new(params, "body_conv", c, c, 3, 1, rng);
        let upsample = config
            .upsample_steps()
            .into_iter()
            .enumerate()
            .map(|(i, f)| (Conv2d::new(params, &format!("upsample.{i}"), c, c * f * f, 3, 1, rng), f))
            .collect();
        let last = Conv2d::new(params, "last", c, 3, 3, 1, rng);
        Ok(DsatNet {
            config: config.clone(),
            shallow,
            groups,
            body_conv,
            upsample,
            last,
        })
    }

    /// `lq` is `[3, H, W]`; returns `[3, sH, sW]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, lq: Var, cond: Conditioning) -> Result<Var> {
        Ok(self.forward_traced(g, p, lq, cond)?.output)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        lq: Var,
        cond: Conditioning,
    ) -> Result<ForwardTrace> {
        let m = self.config.window;
        match *g.shape(lq) {
            [3, h, w] if h >= m && w >= m => {}
            ref s => return Err(Error::dim(format!("input must be [3, H, W] with H, W >= {m}, got {s:?}"))),
        }
        if let Conditioning::Representation(d) = cond {
            if g.shape(d) != [self.config.degradation_dim] {
                return Err(Error::dim(format!(
                    "representation must be [{}], got {:?}",
                    self.config.degradation_dim,
                    g.shape(d)
                )));
            }
        }
        let attention_weights = self.config.ablation.attention_weights;
        let (h, w) = (g.shape(lq)[1], g.shape(lq)[2]);
        let mean = g.constant(mean_image(h, w));
        let centred = g.sub(lq, mean)?;
        let shallow = self.shallow.forward(g, p, centred)?;
        let mut x = shallow;
        let mut layers = Vec::new();
        for group in &self.groups {
            x = group.forward(g, p, x, cond, attention_weights, &mut layers)?;
        }
        let deep = self.body_conv.forward(g, p, x)?;
        let mut y = g.add(shallow, deep)?;
        for (conv, f) in &self.upsample {
            y = conv.forward(g, p, y)?;
            y = g.pixel_shuffle(y, *f)?;
        }
        let y = self.last.forward(g, p, y)?;
        let s = self.config.scale;
        let mean = g.constant(mean_image(s * h, s * w));
        let output = g.add(y, mean)?;
        Ok(ForwardTrace {
            output,
            shallow,
            deep,
            layers,
        })
    }
}
