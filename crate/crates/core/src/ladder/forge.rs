//! The forge run: cut pristine clips, push each through the ladder and
//! write the manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_ladder, sample_training_frames, segment_clips, ClipRecord, CorpusManifest, LadderRung, SourceEntry,
    TranscodeJob, Transcoder, BITRATE_TOLERANCE, CANVAS, MANIFEST_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::media::{
    load_frames, rescale, rgb_to_ycbcr, write_frames, ChromaSiting, Filter, FrameGeometry, HdrFrame, PixelLayout,
    RawVideo, Transfer,
};

/// A long source video: raw planar file with a geometry sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceVideo {
    pub source_id: String,
    pub path: PathBuf,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeConfig {
    pub ladder: Vec<LadderRung>,
    pub global_seed: u64,
    /// Storage resolution of every clip; rungs scale with it.
    pub canvas: (usize, usize),
    pub frames_per_clip: usize,
    pub workers: usize,
    pub filter: Filter,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            ladder: default_ladder(),
            global_seed: 0,
            canvas: CANVAS,
            frames_per_clip: 1,
            workers: 1,
            filter: Filter::Lanczos3,
        }
    }
}

/// 10-bit limited-range 4:2:0 PQ at the canvas size.
fn canvas_geometry(canvas: (usize, usize)) -> FrameGeometry {
    FrameGeometry::hdr10(canvas.0, canvas.1)
}

/// Brings a source frame to the corpus format: PQ Y'CbCr 4:2:0 at the canvas.
fn to_canvas(frame: &HdrFrame, canvas: (usize, usize), filter: Filter) -> Result<HdrFrame> {
    let target = canvas_geometry(canvas);
    let g = frame.geometry;
    let native = g.transfer == Transfer::Pq
        && g.pixel_layout == PixelLayout::YCbCr
        && g.chroma == ChromaSiting::Cs420
        && !g.full_range
        && g.bit_depth == 10;
    let ycbcr = if native {
        frame.clone()
    } else {
        let rgb = frame.to_pq_rgb()?;
        let rgb = HdrFrame {
            geometry: FrameGeometry { bit_depth: 10, ..rgb.geometry },
            planes: rgb.planes,
        };
        rgb_to_ycbcr(&rgb, ChromaSiting::Cs420, false)?
    };
    if (ycbcr.width(), ycbcr.height()) == canvas {
        Ok(HdrFrame { geometry: target, ..ycbcr })
    } else {
        rescale(&ycbcr, canvas.0, canvas.1, filter)
    }
}

fn write_clip(out_dir: &Path, name: &str, frames: &[HdrFrame]) -> Result<PathBuf> {
    let rel = PathBuf::from("clips").join(format!("{name}.yuv"));
    let path = out_dir.join(&rel);
    write_frames(&path, frames)?;
    frames[0].geometry.write_sidecar(FrameGeometry::sidecar_path(&path))?;
    Ok(rel)
}

/// One rung applied to canvas-sized frames.
#[derive(Debug, Clone)]
pub struct Distorted {
    pub frames: Vec<HdrFrame>,
    pub target_kbps: f64,
    pub achieved_kbps: f64,
    pub warnings: Vec<String>,
}

/// Downscales to the rung resolution, transcodes at the rung bitrate and
/// upscales back to the canvas. Both rung figures scale with the canvas.
pub fn distort(
    frames: &[HdrFrame],
    rung: &LadderRung,
    transcoder: &dyn Transcoder,
    canvas: (usize, usize),
    filter: Filter,
    fps: f64,
    work_dir: &Path,
) -> Result<Distorted> {
    rung.validate()?;
    let (w, h, mbps) = rung.scaled_to(canvas);
    let down = frames.iter().map(|f| rescale(f, w, h, filter)).collect::<Result<Vec<_>>>()?;
    let target_kbps = mbps * 1000.0;
    let coded = transcoder.transcode(&TranscodeJob {
        frames: &down,
        fps,
        bitrate_kbps: target_kbps,
        work_dir,
    })?;
    let mut warnings = Vec::new();
    if (coded.width, coded.height) != (w, h) {
        warnings.push(format!(
            "encoder produced {}x{}, expected {w}x{h}",
            coded.width, coded.height
        ));
    }
    let deviation = (coded.achieved_kbps - target_kbps).abs() / target_kbps;
    if deviation > BITRATE_TOLERANCE {
        warnings.push(format!(
            "achieved {:.1} kbps is {:.1}% away from the {:.1} kbps target",
            coded.achieved_kbps,
            deviation * 100.0,
            target_kbps
        ));
    }
    let up = coded
        .frames
        .iter()
        .map(|f| rescale(f, canvas.0, canvas.1, filter))
        .collect::<Result<Vec<_>>>()?;
    Ok(Distorted {
        frames: up,
        target_kbps,
        achieved_kbps: coded.achieved_kbps,
        warnings,
    })
}

/// Runs every rung on a pristine clip and writes the results. Returns one
/// record per rung, classes 1 onwards in ladder order.
pub fn apply_ladder(
    clip: &ClipRecord,
    frames: &[HdrFrame],
    rungs: &[LadderRung],
    transcoder: &dyn Transcoder,
    canvas: (usize, usize),
    filter: Filter,
    out_dir: &Path,
) -> Result<Vec<ClipRecord>> {
    if clip.distortion_class != 0 {
        return Err(Error::InvalidArgument(format!("clip {} is not pristine", clip.clip_id)));
    }
    if frames.is_empty() || frames.iter().any(|f| (f.width(), f.height()) != canvas) {
        return Err(Error::InvalidArgument(format!(
            "clip {} frames must be {}x{}",
            clip.clip_id, canvas.0, canvas.1
        )));
    }
    std::fs::create_dir_all(out_dir.join("clips")).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::with_capacity(rungs.len());
    for (i, rung) in rungs.iter().enumerate() {
        let class = i as u8 + 1;
        let clip_id = format!("{}_c{class}", clip.clip_id);
        let work = out_dir.join("work").join(&clip_id);
        std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        let d = distort(frames, rung, transcoder, canvas, filter, clip.fps, &work);
        let _ = std::fs::remove_dir_all(&work);
        let d = d?;
        for w in &d.warnings {
            log::warn!("{} rung {}: {w}", clip.clip_id, rung.name);
        }
        let path = write_clip(out_dir, &clip_id, &d.frames)?;
        out.push(ClipRecord {
            clip_id,
            distortion_class: class,
            rung: Some(rung.name.clone()),
            path: Some(path),
            frame_count: d.frames.len(),
            target_kbps: Some(d.target_kbps),
            achieved_kbps: Some(d.achieved_kbps),
            training_frames: Vec::new(),
            warnings: d.warnings,
            ..clip.clone()
        });
    }
    let _ = std::fs::remove_dir(out_dir.join("work"));
    Ok(out)
}

fn cut_clip(source: &SourceVideo, geometry: FrameGeometry, available: usize, clip: &ClipRecord) -> Result<Vec<HdrFrame>> {
    let start = (clip.clip_start * source.fps).floor() as usize;
    let end = (start + clip.frame_count).min(available);
    if start >= end {
        return Err(Error::InvalidArgument(format!(
            "clip {} starts past the end of {}",
            clip.clip_id,
            source.path.display()
        )));
    }
    load_frames(&source.path, geometry, &(start..end).collect::<Vec<_>>())
}

/// Builds the whole corpus under `out_dir` and writes `manifest.json`.
pub fn forge(sources: &[SourceVideo], cfg: &ForgeConfig, transcoder: &dyn Transcoder, out_dir: &Path) -> Result<CorpusManifest> {
    if cfg.ladder.is_empty() || cfg.frames_per_clip == 0 {
        return Err(Error::Config("the ladder and frames_per_clip must be nonempty".into()));
    }
    let mut ids: Vec<&str> = sources.iter().map(|s| s.source_id.as_str()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0].to_string()));
    }
    canvas_geometry(cfg.canvas).validate()?;
    std::fs::create_dir_all(out_dir.join("clips")).map_err(|e| Error::io(out_dir, e))?;

    let mut entries = Vec::new();
    let mut jobs = Vec::new();
    for source in sources {
        let geometry = FrameGeometry::read_sidecar(FrameGeometry::sidecar_path(&source.path))?;
        let available = RawVideo::open(&source.path, geometry)?.frame_count();
        let duration = available as f64 / source.fps;
        entries.push(SourceEntry {
            source_id: source.source_id.clone(),
            duration,
            transfer: geometry.transfer,
            path: source.path.clone(),
        });
        for clip in segment_clips(&source.source_id, duration, source.fps, cfg.global_seed)? {
            jobs.push((source, geometry, available, clip));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let groups: Vec<Vec<ClipRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|(source, geometry, available, clip)| -> Result<Vec<ClipRecord>> {
                let frames = cut_clip(source, *geometry, *available, clip)?
                    .iter()
                    .map(|f| to_canvas(f, cfg.canvas, cfg.filter))
                    .collect::<Result<Vec<_>>>()?;
                let pristine = ClipRecord {
                    path: Some(write_clip(out_dir, &clip.clip_id, &frames)?),
                    frame_count: frames.len(),
                    ..clip.clone()
                };
                let mut group = vec![pristine.clone()];
                group.extend(apply_ladder(&pristine, &frames, &cfg.ladder, transcoder, cfg.canvas, cfg.filter, out_dir)?);
                log::info!("forged {}", clip.clip_id);
                Ok(group)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut clips: Vec<ClipRecord> = groups.into_iter().flatten().collect();
    for c in &mut clips {
        c.training_frames = sample_training_frames(c, cfg.global_seed, cfg.frames_per_clip)?;
    }
    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        global_seed: cfg.global_seed,
        canvas: cfg.canvas,
        frames_per_clip: cfg.frames_per_clip,
        transcoder: transcoder.describe(),
        ladder: cfg.ladder.clone(),
        sources: entries,
        clips,
    };
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::TrainingSet;
    use crate::ladder::{ManifestFrames, SyntheticTranscoder};
    use crate::media::Plane;

    fn write_source(dir: &Path, name: &str, frames: usize, transfer: Transfer) -> SourceVideo {
        let g = FrameGeometry {
            transfer,
            ..FrameGeometry::hdr10(48, 32)
        };
        let fs: Vec<HdrFrame> = (0..frames)
            .map(|k| {
                let planes = g.plane_dims().map(|(w, h)| Plane {
                    width: w,
                    height: h,
                    data: (0..w * h)
                        .map(|i| (0.3 + 0.4 * (((i % w) * 3 + (i / w) * 5 + k) % 17) as f32 / 17.0).min(1.0))
                        .collect(),
                });
                HdrFrame::new(g, planes).unwrap()
            })
            .collect();
        let path = dir.join(format!("{name}.yuv"));
        write_frames(&path, &fs).unwrap();
        g.write_sidecar(FrameGeometry::sidecar_path(&path)).unwrap();
        SourceVideo {
            source_id: name.into(),
            path,
            fps: 0.1,
        }
    }

    #[test]
    fn small_forge_run() {
        let dir = tempfile::tempdir().unwrap();
        // 26 frames at 0.1 fps: 260 s, two windows
        let sources = vec![
            write_source(dir.path(), "a", 26, Transfer::Pq),
            write_source(dir.path(), "b", 37, Transfer::Hlg),
        ];
        let cfg = ForgeConfig {
            canvas: (64, 36),
            global_seed: 5,
            workers: 2,
            ..Default::default()
        };
        let out = dir.path().join("corpus");
        let m = forge(&sources, &cfg, &SyntheticTranscoder, &out).unwrap();
        // 2 + 3 windows, ten entries each
        assert_eq!(m.clips.len(), 50);
        m.validate().unwrap();
        let classes: std::collections::BTreeSet<u8> = m.clips.iter().map(|c| c.distortion_class).collect();
        assert_eq!(classes, (0..10).collect());
        assert_eq!(m.sources[1].transfer, Transfer::Hlg);
        for c in &m.clips {
            let p = out.join(c.path.as_ref().unwrap());
            let g = FrameGeometry::read_sidecar(FrameGeometry::sidecar_path(&p)).unwrap();
            assert_eq!((g.width, g.height, g.transfer), (64, 36, Transfer::Pq));
            assert_eq!(c.training_frames.len(), 1);
        }
        let again = forge(&sources, &cfg, &SyntheticTranscoder, &dir.path().join("again")).unwrap();
        assert_eq!(again.clips, m.clips);

        let loaded = CorpusManifest::load(&out.join("manifest.json")).unwrap();
        assert_eq!(loaded, m);
        let frames = ManifestFrames::open(&out.join("manifest.json")).unwrap();
        assert_eq!(frames.len(), 50);
        let f = frames.frame(7).unwrap();
        assert_eq!((f.width(), f.height(), f.geometry.pixel_layout), (64, 36, PixelLayout::Rgb));
    }

    #[test]
    fn short_sources_and_duplicates_fail() {
        let dir = tempfile::tempdir().unwrap();
        let short = write_source(dir.path(), "s", 10, Transfer::Pq);
        let cfg = ForgeConfig {
            canvas: (64, 36),
            ..Default::default()
        };
        assert!(forge(&[short.clone()], &cfg, &SyntheticTranscoder, dir.path()).is_err());
        assert!(matches!(
            forge(&[short.clone(), short], &cfg, &SyntheticTranscoder, dir.path()),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, "{\"schema_version\": 99}").unwrap();
        assert!(matches!(CorpusManifest::load(&p), Err(Error::Version { found: 99, .. })));
    }
}
