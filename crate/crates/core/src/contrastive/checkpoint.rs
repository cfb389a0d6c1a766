use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TrainConfig};
use crate::container;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HDRQCKPT";

/// Encoder and projector weights with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    /// Hash of the corpus the weights were tuned on.
    pub corpus_hash: Option<String>,
    /// Completed fine-tuning epochs.
    pub epoch: usize,
    pub encoder: Vec<f32>,
    pub projector: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    corpus_hash: Option<String>,
    epoch: usize,
    encoder_len: usize,
    projector_len: usize,
}

impl Checkpoint {
    /// Freshly initialized weights; the projector uses a derived seed.
    pub fn random(model: ModelConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        let encoder = model.encoder().init_params(seed);
        let projector = model.projector().init_params(seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Checkpoint {
            model,
            train: None,
            corpus_hash: None,
            epoch: 0,
            encoder,
            projector,
        })
    }

    /// Initial weights as requested by `model.weights_init`.
    pub fn initial(model: &ModelConfig, seed: u64) -> Result<Self> {
        match &model.weights_init {
            super::WeightsInit::Random => Checkpoint::random(model.clone(), seed),
            super::WeightsInit::SdrPretrained(path) => {
                let source = Checkpoint::load(path)?;
                if source.model.encoder_kind != model.encoder_kind {
                    return Err(Error::Checkpoint(format!(
                        "{} holds a {:?} encoder, config asks for {:?}",
                        path.display(),
                        source.model.encoder_kind,
                        model.encoder_kind
                    )));
                }
                let mut ckpt = Checkpoint::random(model.clone(), seed)?;
                ckpt.encoder = source.encoder;
                // Reuse the projector only when its shape matches.
                if source.projector.len() == ckpt.projector.len() {
                    ckpt.projector = source.projector;
                }
                Ok(ckpt)
            }
        }
    }

    /// Checks weight lengths against the architecture the config describes.
    pub fn check_compatible(&self) -> Result<()> {
        let enc = self.model.encoder().param_len();
        let proj = self.model.projector().param_len();
        if self.encoder.len() != enc || self.projector.len() != proj {
            return Err(Error::Checkpoint(format!(
                "weights ({} + {}) do not fit a {:?} encoder with its projector ({enc} + {proj})",
                self.encoder.len(),
                self.projector.len(),
                self.model.encoder_kind
            )));
        }
        if self.encoder.iter().chain(&self.projector).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            corpus_hash: self.corpus_hash.clone(),
            epoch: self.epoch,
            encoder_len: self.encoder.len(),
            projector_len: self.projector.len(),
        };
        let mut payload = Vec::with_capacity(self.encoder.len() + self.projector.len());
        payload.extend_from_slice(&self.encoder);
        payload.extend_from_slice(&self.projector);
        container::write(path, MAGIC, CHECKPOINT_FORMAT_VERSION, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut payload): (Header, Vec<f32>) = container::read(path, MAGIC, CHECKPOINT_FORMAT_VERSION)?;
        if payload.len() != header.encoder_len + header.projector_len {
            return Err(Error::Corrupted {
                path: path.to_path_buf(),
                reason: "weight count disagrees with header".into(),
            });
        }
        let projector = payload.split_off(header.encoder_len);
        let ckpt = Checkpoint {
            model: header.model,
            train: header.train,
            corpus_hash: header.corpus_hash,
            epoch: header.epoch,
            encoder: payload,
            projector,
        };
        ckpt.check_compatible()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::WeightsInit;
    use crate::file_sha256;
    use crate::nn::EncoderKind;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let mut ckpt = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 4).unwrap();
        ckpt.train = Some(TrainConfig::default());
        ckpt.corpus_hash = Some("abc".into());
        ckpt.epoch = 7;
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert_eq!(file_sha256(&path).unwrap().len(), 64);
    }

    #[test]
    fn missing_and_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Checkpoint::load(&dir.path().join("x")), Err(Error::NotFound(_))));

        let path = dir.path().join("bad.ckpt");
        let mut ckpt = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 4).unwrap();
        ckpt.encoder.pop();
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn pretrained_init_takes_encoder_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sdr.ckpt");
        let source = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 11).unwrap();
        source.save(&path).unwrap();
        let model = ModelConfig {
            weights_init: WeightsInit::SdrPretrained(path.clone()),
            ..ModelConfig::new(EncoderKind::ToyCnn)
        };
        let init = Checkpoint::initial(&model, 0).unwrap();
        assert_eq!(init.encoder, source.encoder);
        assert_eq!(init.model.weights_init, WeightsInit::SdrPretrained(path.clone()));

        let wrong = ModelConfig {
            weights_init: WeightsInit::SdrPretrained(path),
            ..ModelConfig::new(EncoderKind::Residual50)
        };
        assert!(matches!(Checkpoint::initial(&wrong, 0), Err(Error::Checkpoint(_))));
    }
}
