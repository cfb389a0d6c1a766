use std::path::PathBuf;

use clap::Args;
use hdrvqa_core::media::FrameGeometry;
use hdrvqa_core::quality::{fr_feature, Mode, QualityHead};

use crate::error::{CliError, CliResult};
use crate::extract::{open_extractor, InferenceArgs};

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Raw video with a `.geom.toml` sidecar.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Head written by `evaluate --head-out`.
    #[arg(long)]
    pub head: PathBuf,
    /// Pristine reference, required by full-reference heads.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

pub fn run(args: &PredictArgs) -> CliResult<()> {
    if args.stride == 0 {
        return Err(CliError::usage("--stride must be at least 1"));
    }
    let extractor = open_extractor(&args.ckpt, &args.inference)?;
    let head = QualityHead::load(&args.head)?;
    if !head.checkpoint_hash.split(',').any(|h| h == extractor.checkpoint_hash()) {
        return Err(CliError::new(
            "CKPT_MISMATCH",
            format!(
                "head {} was fit on features of checkpoint {}, not {}",
                args.head.display(),
                head.checkpoint_hash,
                extractor.checkpoint_hash()
            ),
        ));
    }
    let features = |path: &PathBuf| -> CliResult<_> {
        let geometry = FrameGeometry::read_sidecar(FrameGeometry::sidecar_path(path))?;
        let id = path.display().to_string();
        Ok(extractor.extract_video(&id, path, geometry, args.stride)?)
    };
    let dist = features(&args.video)?;
    let row = match (head.mode, &args.reference) {
        (Mode::Nr, None) => dist.vector,
        (Mode::Fr, Some(r)) => fr_feature(&features(r)?, &dist)?,
        (Mode::Nr, Some(_)) => return Err(CliError::usage("--reference is only meaningful for a full-reference head")),
        (Mode::Fr, None) => return Err(CliError::usage("this full-reference head needs --reference")),
    };
    println!("{:.6}", head.predict(&row)?);
    Ok(())
}
