//! Contrastive fine-tuning: loss kernels, multi-scale views, the learning
//! rate schedule, checkpoints and the training loop.

mod checkpoint;
mod loss;
mod schedule;
mod train;
mod views;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EncoderKind, Network, Projector};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use loss::{cosine_similarity, ntxent_pairwise, ntxent_syn, total_loss, total_loss_with_grad, LabeledBatch};
pub use schedule::lr_at;
pub use train::{encode_view, finetune, EpochLog, InMemoryFrames, TrainingSet};
pub use views::{build_views, patchify, unpatchify, FlipPolicy, ViewPair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsInit {
    Random,
    /// Encoder weights taken from an existing checkpoint of the same kind.
    SdrPretrained(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_kind: EncoderKind,
    #[serde(default = "default_projector_dim")]
    pub projector_dim: usize,
    /// Hidden width of the projector; the encoder width when absent.
    #[serde(default)]
    pub projector_hidden: Option<usize>,
    #[serde(default = "default_init")]
    pub weights_init: WeightsInit,
}

fn default_projector_dim() -> usize {
    128
}

fn default_init() -> WeightsInit {
    WeightsInit::Random
}

impl ModelConfig {
    pub fn new(encoder_kind: EncoderKind) -> Self {
        ModelConfig {
            encoder_kind,
            projector_dim: default_projector_dim(),
            projector_hidden: None,
            weights_init: WeightsInit::Random,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        self.encoder_kind.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.projector_dim == 0 || self.projector_hidden == Some(0) {
            return Err(Error::Config("projector widths must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Network {
        Network::encoder(self.encoder_kind)
    }

    pub fn projector(&self) -> Projector {
        let d = self.encoder_dim();
        Projector::new(d, self.projector_hidden.unwrap_or(d), self.projector_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub crop_size: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub tau: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub flip: FlipPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 768,
            crop_size: 256,
            patch_size: 64,
            epochs: 25,
            base_lr: 0.1,
            warmup_epochs: 2,
            tau: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            flip: FlipPolicy::Independent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.crop_size == 0 || self.patch_size == 0 {
            return bad("batch_size, crop_size and patch_size must be positive".into());
        }
        if self.crop_size % 2 != 0 || self.crop_size % self.patch_size != 0 || (self.crop_size / 2) % self.patch_size != 0 {
            return bad(format!(
                "crop {} and its half must both tile into {} pixel patches",
                self.crop_size, self.patch_size
            ));
        }
        if !(self.base_lr > 0.0) || !(self.tau > 0.0) || !self.base_lr.is_finite() || !self.tau.is_finite() {
            return bad("base_lr and tau must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay must be nonnegative".into());
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }
}
