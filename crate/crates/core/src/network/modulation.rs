//! Degradation-conditioned kernels and channel weights.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{Conv2d, Linear, LinearInit, LEAKY_SLOPE};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::DsatConfig;

/// Per-block generator mapping the representation to a depthwise kernel
/// `[C, 1, 3, 3]` and channel weights `[C]` in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct ModulationGenerator {
    kernel: Option<(Linear, Linear)>,
    weights: Option<(Conv2d, Conv2d)>,
    channels: usize,
    dim: usize,
}

/// Generated modulation for one mixed block.
#[derive(Clone, Copy, Debug)]
pub struct Modulation {
    pub kernel: Option<Var>,
    pub channel_weights: Option<Var>,
}

impl ModulationGenerator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: &DsatConfig, params: &mut ParamSet<T>, name: &str, rng: &mut R) -> Self {
        let (c, dim) = (cfg.channels, cfg.degradation_dim);
        let kernel = cfg.ablation.dcl.then(|| {
            (
                Linear::new(params, &format!("{name}.kernel_fc1"), dim, c, LinearInit::FanIn, rng),
                Linear::new(params, &format!("{name}.kernel_fc2"), c, c * 9, LinearInit::FanIn, rng),
            )
        });
        let weights = cfg.ablation.uses_channel_weights().then(|| {
            let hidden = cfg.channel_weight_hidden;
            (
                Conv2d::new(params, &format!("{name}.weight_conv1"), dim, hidden, 1, 1, rng),
                Conv2d::new(params, &format!("{name}.weight_conv2"), hidden, c, 1, 1, rng),
            )
        });
        ModulationGenerator {
            kernel,
            weights,
            channels: c,
            dim,
        }
    }

    pub fn has_kernel(&self) -> bool {
        self.kernel.is_some()
    }

    pub fn has_channel_weights(&self) -> bool {
        self.weights.is_some()
    }

    /// `representation` is a `[degradation_dim]` vector.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, representation: Var) -> Result<Modulation> {
        let slope = T::lit(LEAKY_SLOPE);
        let kernel = match &self.kernel {
            Some((fc1, fc2)) => {
                let h = fc1.forward(g, p, representation)?;
                let h = g.leaky_relu(h, slope)?;
                let k = fc2.forward(g, p, h)?;
                Some(g.reshape(k, &[self.channels, 1, 3, 3])?)
            }
            None => None,
        };
        let channel_weights = match &self.weights {
            Some((c1, c2)) => {
                let d = g.reshape(representation, &[self.dim, 1, 1])?;
                let h = c1.forward(g, p, d)?;
                let h = g.leaky_relu(h, slope)?;
                let w = c2.forward(g, p, h)?;
                let w = g.sigmoid(w)?;
                Some(g.reshape(w, &[self.channels])?)
            }
            None => None,
        };
        Ok(Modulation { kernel, channel_weights })
    }

    /// Zero kernel and unit channel weights, as graph constants.
    pub fn neutral<T: Scalar>(&self, g: &mut Graph<T>) -> Modulation {
        Modulation {
            kernel: self
                .kernel
                .as_ref()
                .map(|_| g.constant(Tensor::zeros(&[self.channels, 1, 3, 3]))),
            channel_weights: self.weights.as_ref().map(|_| g.constant(Tensor::ones(&[self.channels]))),
        }
    }
}

/// `F + depthwise(F, kernel) * weights`, channel weights broadcast over space.
pub fn dcl_forward<T: Scalar>(g: &mut Graph<T>, features: Var, kernel: Var, channel_weights: Option<Var>) -> Result<Var> {
    let conv = g.depthwise_conv2d(features, kernel)?;
    let scaled = match channel_weights {
        Some(w) => g.mul_channel(conv, w)?,
        None => conv,
    };
    g.add(features, scaled)
}
