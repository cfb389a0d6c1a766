use std::path::{Path, PathBuf};

use clap::Args;
use hdrvqa_core::features::{FeatureBank, FeatureExtractor, Inference};
use hdrvqa_core::ladder::CorpusManifest;
use hdrvqa_core::media::FrameGeometry;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ckpt_error, CliError, CliResult};
use crate::run::{record_beside, relative_to, Inputs, Stage};

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// A corpus manifest (`.json`) or a CSV with `video_id,path` columns.
    #[arg(long)]
    pub videos: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the bank as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long)]
    pub resume: bool,
}

/// Full-frame inference unless both crop options are given.
#[derive(Debug, Clone, Default, Args)]
pub struct InferenceArgs {
    /// Side of a centered inference crop.
    #[arg(long, requires = "patch")]
    pub crop: Option<usize>,
    /// Patch side used to tile the crop.
    #[arg(long, requires = "crop")]
    pub patch: Option<usize>,
}

impl InferenceArgs {
    pub fn mode(&self) -> Inference {
        match (self.crop, self.patch) {
            (Some(size), Some(patch)) => Inference::Crop { size, patch },
            _ => Inference::FullFrame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub path: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvRow {
    video_id: String,
    path: PathBuf,
}

/// Videos named by a manifest or a CSV list, paths resolved against it.
pub fn read_video_list(list: &Path) -> CliResult<Vec<VideoEntry>> {
    let is_json = list.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut out = Vec::new();
    if is_json {
        let manifest = CorpusManifest::load(list)?;
        for c in manifest.clips {
            let path = c
                .path
                .ok_or_else(|| CliError::config(format!("clip {} has no file in the manifest", c.clip_id)))?;
            out.push(VideoEntry {
                video_id: c.clip_id,
                path: relative_to(list, &path),
            });
        }
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(list)
            .map_err(|e| csv_error(list, e))?;
        for row in reader.deserialize::<CsvRow>() {
            let row = row.map_err(|e| csv_error(list, e))?;
            out.push(VideoEntry {
                video_id: row.video_id,
                path: relative_to(list, &row.path),
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::config(format!("{} lists no videos", list.display())));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::new("INPUT_NOT_FOUND", format!("file not found: {}", path.display()))
        }
        _ => CliError::new("PARSE_ERROR", format!("{}: {e}", path.display())),
    }
}

pub fn open_extractor(ckpt: &Path, inference: &InferenceArgs) -> CliResult<FeatureExtractor> {
    Ok(FeatureExtractor::open(ckpt).map_err(ckpt_error)?.with_inference(inference.mode()))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    stride: usize,
    inference: Inference,
    videos: &'a [VideoEntry],
}

pub fn run(args: &ExtractArgs) -> CliResult<()> {
    if args.stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let extractor = open_extractor(&args.ckpt, &args.inference)?;
    let videos = read_video_list(&args.videos)?;
    let mut inputs = Inputs::default();
    inputs.file(&args.ckpt)?;
    inputs.file(&args.videos)?;
    for v in &videos {
        inputs.media(&v.path)?;
    }
    let snapshot = Snapshot {
        stride: args.stride,
        inference: args.inference.mode(),
        videos: &videos,
    };
    let stage = Stage::begin(record_beside(&args.out), "extract", &snapshot, inputs)?;
    if stage.skip(args.resume) {
        return Ok(());
    }
    let records = videos
        .par_iter()
        .map(|v| {
            let geometry = FrameGeometry::read_sidecar(FrameGeometry::sidecar_path(&v.path))?;
            let f = extractor.extract_video(&v.video_id, &v.path, geometry, args.stride)?;
            log::debug!("{}: {} frames pooled", v.video_id, f.n_frames_pooled);
            Ok(f)
        })
        .collect::<hdrvqa_core::Result<Vec<_>>>()?;
    let bank = FeatureBank::new(records)?;
    bank.save(&args.out)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(csv) = &args.csv {
        bank.export_csv(csv)?;
        outputs.push(csv.clone());
    }
    log::info!("{} videos, {}-d features", bank.len(), bank.dim());
    stage.finish(&outputs)?;
    Ok(())
}
