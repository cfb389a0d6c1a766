//! Fine-tuning corpus construction: scene windows cut from long sources,
//! the bitrate/resolution ladder, class labels and per-clip frame sampling.

mod codec;
mod forge;
mod synthetic;
mod transcode;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::TrainingSet;
use crate::error::{Error, Result};
use crate::media::{FrameGeometry, HdrFrame, RawVideo, Transfer};
use crate::seed;

pub use codec::{encode_to_budget, CodedFrames, PlaneCoeffs};
pub use synthetic::{ladder_corpus, procedural_frame, LabeledCorpus};
pub use forge::{apply_ladder, distort, forge, Distorted, ForgeConfig, SourceVideo};
pub use transcode::{CommandTemplates, CommandTranscoder, SyntheticTranscoder, TranscodeJob, Transcoded, Transcoder};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const CLIP_SECONDS: f64 = 10.0;
pub const WINDOW_SECONDS: f64 = 120.0;
pub const MIN_SOURCE_SECONDS: f64 = 240.0;
pub const CANVAS: (usize, usize) = (3840, 2160);
/// Relative deviation of achieved from target bitrate before a warning.
pub const BITRATE_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderRung {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub bitrate_mbps: f64,
}

impl LadderRung {
    pub fn validate(&self) -> Result<()> {
        let allowed = [(3840, 2160), (1920, 1080), (1280, 720), (960, 540)];
        if !allowed.contains(&(self.width, self.height)) {
            return Err(Error::Config(format!(
                "rung {} has unsupported resolution {}x{}",
                self.name, self.width, self.height
            )));
        }
        if !(self.bitrate_mbps > 0.0 && self.bitrate_mbps.is_finite()) {
            return Err(Error::Config(format!("rung {} needs a positive bitrate", self.name)));
        }
        Ok(())
    }

    /// Rung resolution and bitrate for a canvas other than 3840x2160, keeping
    /// the resolution ratio and bits per pixel. Dimensions stay even.
    pub fn scaled_to(&self, canvas: (usize, usize)) -> (usize, usize, f64) {
        let sx = canvas.0 as f64 / CANVAS.0 as f64;
        let sy = canvas.1 as f64 / CANVAS.1 as f64;
        let even = |v: f64| ((v / 2.0).round() as usize * 2).max(2);
        (
            even(self.width as f64 * sx),
            even(self.height as f64 * sy),
            self.bitrate_mbps * sx * sy,
        )
    }
}

/// The nine distortion rungs; class `i + 1` is rung `i`, class 0 is the
/// pristine clip.
pub fn default_ladder() -> Vec<LadderRung> {
    let rung = |name: &str, width, height, bitrate_mbps| LadderRung {
        name: name.into(),
        width,
        height,
        bitrate_mbps,
    };
    vec![
        rung("2160p-15M", 3840, 2160, 15.0),
        rung("2160p-6M", 3840, 2160, 6.0),
        rung("2160p-3M", 3840, 2160, 3.0),
        rung("1080p-9M", 1920, 1080, 9.0),
        rung("1080p-6M", 1920, 1080, 6.0),
        rung("1080p-1M", 1920, 1080, 1.0),
        rung("720p-4.6M", 1280, 720, 4.6),
        rung("720p-2.6M", 1280, 720, 2.6),
        rung("540p-2.2M", 960, 540, 2.2),
    ]
}

/// Ladder from a TOML file with `[[rung]]` tables.
pub fn read_ladder(path: &Path) -> Result<Vec<LadderRung>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct File {
        rung: Vec<LadderRung>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: File = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.rung.is_empty() || file.rung.len() > 9 {
        return Err(Error::Config("a ladder holds between 1 and 9 rungs".into()));
    }
    for r in &file.rung {
        r.validate()?;
    }
    Ok(file.rung)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub source_id: String,
    pub clip_id: String,
    /// Start of the scene window in the source, seconds.
    pub scene_start: f64,
    pub clip_start: f64,
    pub duration: f64,
    /// 0 for the pristine clip, `i + 1` for ladder rung `i`.
    pub distortion_class: u8,
    pub rung: Option<String>,
    /// Raw clip file relative to the manifest directory.
    pub path: Option<PathBuf>,
    pub frame_count: usize,
    pub fps: f64,
    pub rng_seed: u64,
    pub target_kbps: Option<f64>,
    pub achieved_kbps: Option<f64>,
    /// Frame indices drawn for fine-tuning.
    pub training_frames: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub source_id: String,
    pub duration: f64,
    pub transfer: Transfer,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub global_seed: u64,
    pub canvas: (usize, usize),
    pub frames_per_clip: usize,
    pub transcoder: String,
    pub ladder: Vec<LadderRung>,
    pub sources: Vec<SourceEntry>,
    pub clips: Vec<ClipRecord>,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: serde_json::Value = serde_json::from_str(&text)?;
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Version {
                found,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(probe)?)
    }

    /// Checks clip counts, class labels and interval disjointness.
    pub fn validate(&self) -> Result<()> {
        let rungs = self.ladder.len();
        let pristine = self.clips.iter().filter(|c| c.distortion_class == 0).count();
        if self.clips.len() != pristine * (1 + rungs) {
            return Err(Error::Config(format!(
                "{} clips do not expand {pristine} pristine clips by {rungs} rungs",
                self.clips.len()
            )));
        }
        for c in &self.clips {
            if c.distortion_class as usize > rungs || (c.distortion_class == 0) != c.rung.is_none() {
                return Err(Error::Config(format!("clip {} has an inconsistent class label", c.clip_id)));
            }
        }
        let mut by_source: Vec<&ClipRecord> = self.clips.iter().filter(|c| c.distortion_class == 0).collect();
        by_source.sort_by(|a, b| a.source_id.cmp(&b.source_id).then(a.clip_start.total_cmp(&b.clip_start)));
        for pair in by_source.windows(2) {
            if pair[0].source_id == pair[1].source_id && pair[0].clip_start + pair[0].duration > pair[1].clip_start {
                return Err(Error::Config(format!(
                    "clips {} and {} overlap",
                    pair[0].clip_id, pair[1].clip_id
                )));
            }
        }
        Ok(())
    }
}

/// Clip id of the pristine clip cut from window `w`.
pub fn pristine_clip_id(source_id: &str, window: usize) -> String {
    format!("{source_id}_w{window:03}")
}

/// One uniformly placed 10 s clip inside each consecutive 120 s window.
pub fn segment_clips(source_id: &str, duration: f64, fps: f64, rng_seed: u64) -> Result<Vec<ClipRecord>> {
    if !(duration >= MIN_SOURCE_SECONDS) {
        return Err(Error::InvalidArgument(format!(
            "source {source_id} lasts {duration} s, at least {MIN_SOURCE_SECONDS} s are required"
        )));
    }
    if !(fps > 0.0) {
        return Err(Error::InvalidArgument(format!("frame rate {fps} must be positive")));
    }
    let windows = (duration / WINDOW_SECONDS).floor() as usize;
    let mut rng = seed::stream(seed::derive_seed_str(rng_seed, source_id), &[]);
    Ok((0..windows)
        .map(|w| {
            let scene_start = w as f64 * WINDOW_SECONDS;
            let offset = rng.random_range(0.0..=WINDOW_SECONDS - CLIP_SECONDS);
            let clip_id = pristine_clip_id(source_id, w);
            ClipRecord {
                source_id: source_id.to_string(),
                rng_seed: seed::derive_seed_str(rng_seed, &clip_id),
                clip_id,
                scene_start,
                clip_start: scene_start + offset,
                duration: CLIP_SECONDS,
                distortion_class: 0,
                rung: None,
                path: None,
                frame_count: ((CLIP_SECONDS * fps).round() as usize).max(1),
                fps,
                target_kbps: None,
                achieved_kbps: None,
                training_frames: Vec::new(),
                warnings: Vec::new(),
            }
        })
        .collect())
}

/// Uniform frame indices for fine-tuning, fixed per `(clip_id, seed)`.
pub fn sample_training_frames(clip: &ClipRecord, rng_seed: u64, count: usize) -> Result<Vec<usize>> {
    if clip.frame_count == 0 {
        return Err(Error::InvalidArgument(format!("clip {} has no frames", clip.clip_id)));
    }
    let mut rng = seed::stream(seed::derive_seed_str(rng_seed, &clip.clip_id), &[2]);
    Ok((0..count).map(|_| rng.random_range(0..clip.frame_count)).collect())
}

pub fn sample_training_frame(clip: &ClipRecord, rng_seed: u64) -> Result<usize> {
    Ok(sample_training_frames(clip, rng_seed, 1)?[0])
}

/// Fine-tuning frames drawn from a forged corpus on disk.
#[derive(Debug, Clone)]
pub struct ManifestFrames {
    root: PathBuf,
    items: Vec<(PathBuf, usize)>,
    hash: String,
}

impl ManifestFrames {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = CorpusManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut items = Vec::new();
        for clip in &manifest.clips {
            let path = clip
                .path
                .clone()
                .ok_or_else(|| Error::Config(format!("clip {} has no file", clip.clip_id)))?;
            if clip.training_frames.is_empty() {
                return Err(Error::Config(format!("clip {} has no sampled training frame", clip.clip_id)));
            }
            items.extend(clip.training_frames.iter().map(|&f| (path.clone(), f)));
        }
        Ok(ManifestFrames {
            root,
            items,
            hash: crate::file_sha256(manifest_path)?,
        })
    }
}

impl TrainingSet for ManifestFrames {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn frame(&self, index: usize) -> Result<HdrFrame> {
        let (rel, f) = self.items.get(index).ok_or(Error::IndexOutOfRange {
            index,
            count: self.items.len(),
        })?;
        let path = self.root.join(rel);
        let geometry = FrameGeometry::read_sidecar(FrameGeometry::sidecar_path(&path))?;
        RawVideo::open(&path, geometry)?.read_frame(*f)?.to_pq_rgb()
    }

    fn corpus_hash(&self) -> String {
        self.hash.clone()
    }
}
