//! Run configuration: one TOML document with a section per component.
//! Every key has a default, so a file only lists what it overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degradation::{DegradationSpec, SpecMode, SyntheticKind};
use crate::encoder::{Denominator, EncoderConfig};
use crate::error::{Error, Result};
use crate::network::DsatConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Newline-separated PNG paths; relative paths resolve against the
    /// manifest's directory. Without a manifest a synthetic set is used.
    pub manifest: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_size: usize,
    pub synthetic_kind: SyntheticKind,
    /// Side of the LR training patches (also the encoder's input size).
    pub lr_patch: usize,
    pub spec_mode: SpecMode,
    /// Fixed degradations to pick from; empty means sample from `spec_mode`.
    pub specs: Vec<DegradationSpec>,
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            synthetic_images: 32,
            synthetic_size: 96,
            synthetic_kind: SyntheticKind::Shapes,
            lr_patch: 16,
            spec_mode: SpecMode::IsotropicNoisefree,
            specs: Vec::new(),
            augment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub momentum: f64,
    pub queue_size: usize,
    pub denominator: Denominator,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.07,
            momentum: 0.999,
            queue_size: 256,
            denominator: Denominator::WithPositive,
        }
    }
}

/// Whether joint training keeps updating the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    Continued,
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub halving_period_epochs: u64,
    pub steps_per_epoch: u64,
    pub total_epochs: u64,
    pub encoder_pretrain_epochs: u64,
    /// Images per batch (two patches each).
    pub batch_size: usize,
    pub encoder_mode: EncoderMode,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            halving_period_epochs: 250,
            steps_per_epoch: 1,
            total_epochs: 500,
            encoder_pretrain_epochs: 0,
            batch_size: 8,
            encoder_mode: EncoderMode::Continued,
            checkpoint_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn encoder_steps(&self) -> u64 {
        self.encoder_pretrain_epochs * self.steps_per_epoch
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch.max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: DsatConfig,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Small preset that trains in minutes on one core.
    pub fn desk() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            data: DataConfig::default(),
            model: DsatConfig::default(),
            encoder: EncoderConfig::default(),
            contrastive: ContrastiveConfig::default(),
            train: TrainConfig::default(),
        };
        cfg.sync();
        cfg
    }

    /// Full-size settings.
    pub fn full() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            data: DataConfig {
                lr_patch: 48,
                spec_mode: SpecMode::General,
                ..DataConfig::default()
            },
            model: DsatConfig::full(4),
            encoder: EncoderConfig::full(),
            contrastive: ContrastiveConfig {
                queue_size: 8192,
                ..ContrastiveConfig::default()
            },
            train: TrainConfig {
                total_epochs: 1000,
                lr0: 2e-4,
                encoder_pretrain_epochs: 300,
                batch_size: 16,
                ..TrainConfig::default()
            },
        };
        cfg.sync();
        cfg
    }

    /// Derived fields that must agree across sections.
    fn sync(&mut self) {
        self.encoder.patch = self.data.lr_patch;
        self.model.degradation_dim = self.encoder.embed_dim;
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Re-derives dependent fields and checks consistency; call after
    /// editing a loaded config.
    pub fn finalize(&mut self) -> Result<()> {
        self.sync();
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.encoder.validate()?;
        if self.encoder.patch != self.data.lr_patch || self.model.degradation_dim != self.encoder.embed_dim {
            return bad("encoder patch/embedding size disagrees with data/model".into());
        }
        if self.data.lr_patch < self.model.window {
            return bad(format!(
                "lr_patch {} is smaller than the window {}",
                self.data.lr_patch, self.model.window
            ));
        }
        if self.data.manifest.is_none() && (self.data.synthetic_images == 0 || self.data.synthetic_size == 0) {
            return bad("synthetic data needs a positive image count and size".into());
        }
        for spec in &self.data.specs {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            if spec.scale != self.model.scale {
                return bad(format!("degradation scale {} differs from model scale {}", spec.scale, self.model.scale));
            }
        }
        let c = &self.contrastive;
        if !(c.temperature > 0.0) || !(0.0..=1.0).contains(&c.momentum) || c.queue_size == 0 {
            return bad(format!("invalid contrastive settings {c:?}"));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.steps_per_epoch == 0 || !(t.lr0 >= 0.0) || !(t.eps > 0.0) {
            return bad(format!("invalid training settings {t:?}"));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }
}
