use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture switches of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Contrastive degradation learning; when off the network is fed a
    /// zero representation and the degradation loss is dropped.
    pub degradation_learning: bool,
    /// Degradation-aware depthwise convolution in every mixed block.
    pub dcl: bool,
    /// Channel weights on the attention values.
    pub attention_weights: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::model(5).expect("model5 exists")
    }
}

impl Ablation {
    /// Presets `model1` .. `model5`.
    pub fn model(index: usize) -> Option<Self> {
        let (degradation_learning, dcl, attention_weights) = match index {
            1 => (false, true, true),
            2 => (true, true, false),
            3 => (true, false, true),
            4 => (true, false, false),
            5 => (true, true, true),
            _ => return None,
        };
        Some(Ablation {
            degradation_learning,
            dcl,
            attention_weights,
        })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        name.strip_prefix("model")
            .and_then(|i| i.parse().ok())
            .and_then(Self::model)
            .ok_or_else(|| Error::Config(format!("unknown ablation preset {name:?} (model1..model5)")))
    }

    /// Whether the per-block modulation generator produces channel weights.
    pub fn uses_channel_weights(&self) -> bool {
        self.dcl || self.attention_weights
    }
}

/// Hyperparameters of the SR network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsatConfig {
    /// Number of residual groups.
    pub blocks: usize,
    /// Mixed blocks per group.
    pub layers: usize,
    pub channels: usize,
    pub window: usize,
    pub heads: usize,
    pub scale: usize,
    pub mlp_ratio: f64,
    /// Length of the degradation representation; taken from the encoder
    /// section when part of a run configuration.
    #[serde(skip)]
    pub degradation_dim: usize,
    /// Hidden width of the channel-weight generator.
    pub channel_weight_hidden: usize,
    pub ablation: Ablation,
}

impl Default for DsatConfig {
    fn default() -> Self {
        Self::desk(2)
    }
}

impl DsatConfig {
    pub fn desk(scale: usize) -> Self {
        DsatConfig {
            blocks: 2,
            layers: 2,
            channels: 36,
            window: 8,
            heads: 2,
            scale,
            mlp_ratio: 2.0,
            degradation_dim: 256,
            channel_weight_hidden: 9,
            ablation: Ablation::default(),
        }
    }

    pub fn full(scale: usize) -> Self {
        DsatConfig {
            blocks: 6,
            layers: 6,
            channels: 180,
            window: 8,
            heads: 6,
            scale,
            mlp_ratio: 4.0,
            degradation_dim: 256,
            channel_weight_hidden: 45,
            ablation: Ablation::default(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.channels as f64) * self.mlp_ratio).round() as usize
    }

    /// Upsampling factors of the reconstruction head.
    pub fn upsample_steps(&self) -> Vec<usize> {
        match self.scale {
            4 => vec![2, 2],
            s => vec![s],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels ({}) must be a positive multiple of heads ({})", self.channels, self.heads));
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if self.mlp_hidden() == 0 || self.degradation_dim == 0 || self.channel_weight_hidden == 0 {
            return bad("mlp_ratio, degradation_dim and channel_weight_hidden must be positive".into());
        }
        Ok(())
    }
}
