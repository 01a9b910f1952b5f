use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{kaiming_std, Conv2d, Linear, LinearInit, LEAKY_SLOPE};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor on the norm when normalising embeddings.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of the first convolution stage; later stages use 2x and 4x.
    pub width: usize,
    pub embed_dim: usize,
    /// Side of the square LR patches [`DegradationEncoder::encode`] accepts;
    /// taken from the data section when part of a run configuration.
    #[serde(skip)]
    pub patch: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            width: 16,
            embed_dim: 256,
            patch: 48,
        }
    }
}

impl EncoderConfig {
    pub fn full() -> Self {
        EncoderConfig {
            width: 64,
            embed_dim: 256,
            patch: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.embed_dim == 0 || self.patch < 4 {
            return Err(Error::Config(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Six 3x3 convolutions with leaky ReLU, global average pooling and a
/// two-layer head. The head output is the representation; its unit-norm
/// version is the embedding used by the contrastive loss.
#[derive(Clone, Debug)]
pub struct DegradationEncoder {
    pub config: EncoderConfig,
    pub convs: Vec<Conv2d>,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Output of an encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[embed_dim]` pre-normalisation vector.
    pub representation: Var,
    /// `[embed_dim]` unit vector.
    pub embedding: Var,
}

impl DegradationEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: &EncoderConfig, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let stages = [(3, w, 1), (w, w, 1), (w, 2 * w, 2), (2 * w, 2 * w, 1), (2 * w, 4 * w, 2), (4 * w, 4 * w, 1)];
        let convs = stages
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                let init = LinearInit::Normal(kaiming_std(9 * cin, LEAKY_SLOPE));
                Conv2d::with_init(params, &format!("conv{i}"), cin, cout, 3, stride, init, rng)
            })
            .collect();
        let d = config.embed_dim;
        Ok(DegradationEncoder {
            config: config.clone(),
            convs,
            fc1: Linear::new(params, "fc1", 4 * w, d, LinearInit::Normal(kaiming_std(4 * w, LEAKY_SLOPE)), rng),
            fc2: Linear::new(params, "fc2", d, d, LinearInit::Normal(1.0 / (d as f64).sqrt()), rng),
        })
    }

    /// Encodes a `[3, H, W]` image of any size.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Encoded> {
        match *g.shape(x) {
            [3, h, w] if h >= 4 && w >= 4 => {}
            ref s => return Err(Error::dim(format!("encoder input must be [3, H, W] with H, W >= 4, got {s:?}"))),
        }
        let slope = T::lit(LEAKY_SLOPE);
        let mut y = x;
        for conv in &self.convs {
            y = conv.forward(g, p, y)?;
            y = g.leaky_relu(y, slope)?;
        }
        let y = g.global_avg_pool(y)?;
        let y = self.fc1.forward(g, p, y)?;
        let y = g.leaky_relu(y, slope)?;
        let representation = self.fc2.forward(g, p, y)?;
        let embedding = g.l2_normalize(representation, T::lit(NORM_EPS))?;
        Ok(Encoded {
            representation,
            embedding,
        })
    }

    /// Unit-norm embedding of one `[3, patch, patch]` patch.
    pub fn encode<T: Scalar>(&self, params: &ParamSet<T>, patch: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.config.patch;
        if patch.shape() != [3, p, p] {
            return Err(Error::dim(format!("expected a [3, {p}, {p}] patch, got {:?}", patch.shape())));
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.constant(patch.clone());
        let enc = self.forward(&mut g, &bound, x)?;
        Ok(g.value(enc.embedding).clone())
    }
}
