//! Parameterised building blocks shared by the encoder and the SR network.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Leaky-ReLU slope used throughout.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

/// He-normal standard deviation for a layer followed by a leaky ReLU.
pub fn kaiming_std(fan_in: usize, slope: f64) -> f64 {
    (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt()
}

impl Conv2d {
    /// `k x k` convolution with `(k-1)/2` zero padding; weights and bias
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_init(params, name, c_in, c_out, k, stride, LinearInit::FanIn, rng)
    }

    /// As [`Conv2d::new`] with an explicit initialisation.
    #[allow(clippy::too_many_arguments)]
    pub fn with_init<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        init: LinearInit,
        rng: &mut R,
    ) -> Self {
        let shape = [c_out, c_in, k, k];
        let (w, b) = match init {
            LinearInit::FanIn => {
                let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
                (Tensor::uniform(&shape, -bound, bound, rng), Tensor::uniform(&[c_out], -bound, bound, rng))
            }
            LinearInit::Normal(std) => (Tensor::randn(&shape, std, rng), Tensor::zeros(&[c_out])),
        };
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), b);
        Conv2d {
            weight,
            bias: Some(bias),
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], self.bias.map(|b| p[b]), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// Weight initialisation for [`Linear`] and [`Conv2d`].
#[derive(Clone, Copy, Debug)]
pub enum LinearInit {
    /// `U(-1/sqrt(d_in), 1/sqrt(d_in))` weights and bias.
    FanIn,
    /// `N(0, std^2)` weights, zero bias.
    Normal(f64),
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: LinearInit,
        rng: &mut R,
    ) -> Self {
        let (w, b) = match init {
            LinearInit::FanIn => {
                let bound = 1.0 / (d_in as f64).sqrt();
                (
                    Tensor::uniform(&[d_in, d_out], -bound, bound, rng),
                    Tensor::uniform(&[d_out], -bound, bound, rng),
                )
            }
            LinearInit::Normal(std) => (Tensor::randn(&[d_in, d_out], std, rng), Tensor::zeros(&[d_out])),
        };
        Linear {
            weight: params.add(format!("{name}.weight"), w),
            bias: Some(params.add(format!("{name}.bias"), b)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p[self.weight], self.bias.map(|b| p[b]))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma], p[self.beta], T::lit(self.eps))
    }
}
