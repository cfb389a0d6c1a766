//! Frozen-encoder features: native and half-scale pooled encoder outputs
//! per frame, averaged over time into one descriptor per video, and the
//! binary bank that stores them.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::contrastive::{patchify, Checkpoint};
use crate::error::{Error, Result};
use crate::media::{rescale, Filter, FrameGeometry, HdrFrame, RawVideo};
use crate::nn::{Network, Tensor};

pub const BANK_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HDRQBANK";

/// Per-video descriptor: mean over frames of native ‖ half-scale features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFeature {
    pub video_id: String,
    pub vector: Vec<f32>,
    pub n_frames_pooled: usize,
    pub checkpoint_hash: String,
}

/// Spatial extent fed to the encoder at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inference {
    /// The whole frame, pooled by the encoder's global average.
    #[default]
    FullFrame,
    /// A centred `size` square tiled into `patch` tiles; tile features are
    /// averaged, as during fine-tuning.
    Crop { size: usize, patch: usize },
}

/// Encoder weights bound to the identity of the checkpoint they came from.
pub struct FeatureExtractor {
    encoder: Network,
    params: Vec<f32>,
    min_input: usize,
    checkpoint_hash: String,
    pub inference: Inference,
}

impl FeatureExtractor {
    pub fn new(ckpt: &Checkpoint, checkpoint_hash: impl Into<String>) -> Result<Self> {
        ckpt.check_compatible()?;
        Ok(FeatureExtractor {
            encoder: ckpt.model.encoder(),
            params: ckpt.encoder.clone(),
            min_input: ckpt.model.encoder_kind.min_input(),
            checkpoint_hash: checkpoint_hash.into(),
            inference: Inference::FullFrame,
        })
    }

    /// Loads a checkpoint file; its SHA-256 becomes the recorded hash.
    pub fn open(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        FeatureExtractor::new(&ckpt, crate::file_sha256(path)?)
    }

    pub fn with_inference(mut self, inference: Inference) -> Self {
        self.inference = inference;
        self
    }

    pub fn dim(&self) -> usize {
        2 * self.encoder.out_dim
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    fn encode(&self, frame: &HdrFrame) -> Result<Vec<f32>> {
        let x = Tensor::from_vec(3, frame.height(), frame.width(), frame.to_chw()?);
        match self.inference {
            Inference::FullFrame => Ok(self.encoder.infer(&self.params, x)),
            Inference::Crop { patch, .. } => {
                let tiles = patchify(&x, patch)?;
                let mut acc = vec![0.0f32; self.encoder.out_dim];
                for t in tiles.iter() {
                    for (a, v) in acc.iter_mut().zip(self.encoder.infer(&self.params, t.clone())) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= tiles.len() as f32);
                Ok(acc)
            }
        }
    }

    /// Native-scale features followed by half-scale features; no projector.
    pub fn frame_feature(&self, frame: &HdrFrame) -> Result<Vec<f32>> {
        let rgb = frame.to_pq_rgb()?;
        let native = match self.inference {
            Inference::FullFrame => rgb,
            Inference::Crop { size, patch } => {
                if size < 2 || patch == 0 || size % patch != 0 || (size / 2) % patch != 0 {
                    return Err(Error::Config(format!(
                        "crop {size} and its half must tile into {patch} patches"
                    )));
                }
                if rgb.width() < size || rgb.height() < size {
                    return Err(Error::InvalidArgument(format!(
                        "{}x{} frame is smaller than the {size} inference crop",
                        rgb.width(),
                        rgb.height()
                    )));
                }
                rgb.crop((rgb.width() - size) / 2, (rgb.height() - size) / 2, size, size)?
            }
        };
        let (w, h) = (native.width() / 2, native.height() / 2);
        let smallest = match self.inference {
            Inference::FullFrame => w.min(h),
            Inference::Crop { patch, .. } => patch,
        };
        if smallest < self.min_input {
            return Err(Error::InvalidArgument(format!(
                "{}x{} frame is too small for the encoder at half scale",
                native.width(),
                native.height()
            )));
        }
        let half = rescale(&native, w, h, Filter::Lanczos3)?;
        let mut out = self.encode(&native)?;
        out.extend(self.encode(&half)?);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Encoder("non-finite feature".into()));
        }
        Ok(out)
    }

    /// Pools features over frames `0, stride, 2 stride, ...` of a raw video.
    pub fn extract_video(
        &self,
        video_id: &str,
        path: &Path,
        geometry: FrameGeometry,
        stride: usize,
    ) -> Result<VideoFeature> {
        if stride == 0 {
            return Err(Error::InvalidArgument("frame stride must be positive".into()));
        }
        let mut video = RawVideo::open(path, geometry)?;
        let count = video.frame_count();
        // A stride longer than the clip counts as selecting nothing.
        if count == 0 || stride > count {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} selects no frames from the {count} in {}",
                path.display()
            )));
        }
        let mut feats = Vec::new();
        for i in (0..count).step_by(stride) {
            feats.push(self.frame_feature(&video.read_frame(i)?)?);
        }
        pool_video(video_id, &feats, &self.checkpoint_hash)
    }
}

/// Elementwise mean of per-frame features.
pub fn pool_video(video_id: &str, features: &[Vec<f32>], checkpoint_hash: &str) -> Result<VideoFeature> {
    let first = features
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("no frame features for {video_id}")))?;
    let dim = first.len();
    let mut acc = vec![0.0f64; dim];
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += *v as f64;
        }
    }
    let n = features.len() as f64;
    Ok(VideoFeature {
        video_id: video_id.to_string(),
        vector: acc.into_iter().map(|a| (a / n) as f32).collect(),
        n_frames_pooled: features.len(),
        checkpoint_hash: checkpoint_hash.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    dim: usize,
    records: Vec<RecordMeta>,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    video_id: String,
    n_frames_pooled: usize,
    checkpoint_hash: String,
}

/// Validated collection of video features sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank {
    records: Vec<VideoFeature>,
}

impl FeatureBank {
    pub fn new(records: Vec<VideoFeature>) -> Result<Self> {
        let mut seen = HashSet::new();
        let dim = records.first().map(|r| r.vector.len());
        for r in &records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::DuplicateId(r.video_id.clone()));
            }
            if Some(r.vector.len()) != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap_or(0),
                    found: r.vector.len(),
                });
            }
            if r.n_frames_pooled == 0 || r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid feature record {}", r.video_id)));
            }
        }
        Ok(FeatureBank { records })
    }

    pub fn records(&self) -> &[VideoFeature] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.vector.len())
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoFeature> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Map from id to record for repeated lookups.
    pub fn index(&self) -> std::collections::HashMap<&str, &VideoFeature> {
        self.records.iter().map(|r| (r.video_id.as_str(), r)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // re-check in case records were assembled by hand
        FeatureBank::new(self.records.clone())?;
        let header = BankHeader {
            dim: self.dim(),
            records: self
                .records
                .iter()
                .map(|r| RecordMeta {
                    video_id: r.video_id.clone(),
                    n_frames_pooled: r.n_frames_pooled,
                    checkpoint_hash: r.checkpoint_hash.clone(),
                })
                .collect(),
        };
        let payload: Vec<f32> = self.records.iter().flat_map(|r| r.vector.iter().copied()).collect();
        container::write(path, MAGIC, BANK_FORMAT_VERSION, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (BankHeader, Vec<f32>) = container::read(path, MAGIC, BANK_FORMAT_VERSION)?;
        if payload.len() != header.dim * header.records.len() {
            return Err(Error::Corrupted {
                path: path.to_path_buf(),
                reason: "matrix size disagrees with header".into(),
            });
        }
        let records = header
            .records
            .into_iter()
            .enumerate()
            .map(|(i, m)| VideoFeature {
                video_id: m.video_id,
                vector: payload[i * header.dim..(i + 1) * header.dim].to_vec(),
                n_frames_pooled: m.n_frames_pooled,
                checkpoint_hash: m.checkpoint_hash,
            })
            .collect();
        FeatureBank::new(records)
    }

    /// One row per video: id, then every feature column.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut head = vec!["video_id".to_string()];
        head.extend((0..self.dim()).map(|i| format!("f{i}")));
        w.write_record(&head).map_err(|e| Error::Serialization(e.to_string()))?;
        for r in &self.records {
            let mut row = vec![r.video_id.clone()];
            row.extend(r.vector.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
