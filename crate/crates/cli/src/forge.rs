use std::path::PathBuf;

use clap::Args;
use hdrvqa_core::ladder::{
    default_ladder, forge, read_ladder, CommandTemplates, CommandTranscoder, ForgeConfig, SourceVideo,
    SyntheticTranscoder, Transcoder, CANVAS,
};
use hdrvqa_core::media::{Filter, FrameGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{create_dir, read_toml, relative_to, Inputs, Stage};

#[derive(Debug, Clone, Args)]
pub struct ForgeArgs {
    /// TOML list of `[[source]]` tables with source_id, path and fps.
    #[arg(long)]
    pub sources: PathBuf,
    /// Ladder TOML with `[[rung]]` tables, or `default`.
    #[arg(long, default_value = "default")]
    pub ladder: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Optional TOML with canvas, frames_per_clip, filter and transcoder.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourcesFile {
    source: Vec<SourceVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscoderChoice {
    /// `synthetic` or `ffmpeg-x265`.
    Named(String),
    Command(CommandTemplates),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeFile {
    pub canvas: (usize, usize),
    pub frames_per_clip: usize,
    pub filter: Filter,
    pub transcoder: TranscoderChoice,
}

impl Default for ForgeFile {
    fn default() -> Self {
        ForgeFile {
            canvas: CANVAS,
            frames_per_clip: 1,
            filter: Filter::Lanczos3,
            transcoder: TranscoderChoice::Named("synthetic".into()),
        }
    }
}

fn transcoder(choice: &TranscoderChoice) -> CliResult<Box<dyn Transcoder>> {
    Ok(match choice {
        TranscoderChoice::Named(n) if n == "synthetic" => Box::new(SyntheticTranscoder),
        TranscoderChoice::Named(n) if n == "ffmpeg-x265" => Box::new(CommandTranscoder {
            templates: CommandTemplates::ffmpeg_x265(),
        }),
        TranscoderChoice::Named(n) => {
            return Err(CliError::config(format!(
                "unknown transcoder {n:?} (expected synthetic, ffmpeg-x265 or a command table)"
            )))
        }
        TranscoderChoice::Command(t) => Box::new(CommandTranscoder { templates: t.clone() }),
    })
}

#[derive(Serialize)]
struct Snapshot<'a> {
    forge: &'a ForgeConfig,
    transcoder: &'a TranscoderChoice,
    sources: &'a [SourceVideo],
}

pub fn run(args: &ForgeArgs) -> CliResult<()> {
    if args.workers == 0 {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    let mut inputs = Inputs::default();
    inputs.file(&args.sources)?;
    let mut sources = read_toml::<SourcesFile>(&args.sources)?.source;
    if sources.is_empty() {
        return Err(CliError::config(format!("{} lists no sources", args.sources.display())));
    }
    for s in &mut sources {
        s.path = relative_to(&args.sources, &s.path);
        inputs.media(&s.path)?;
        inputs.file(&FrameGeometry::sidecar_path(&s.path))?;
    }
    let file: ForgeFile = match &args.config {
        Some(p) => {
            inputs.file(p)?;
            read_toml(p)?
        }
        None => ForgeFile::default(),
    };
    let ladder = if args.ladder == "default" {
        default_ladder()
    } else {
        let p = PathBuf::from(&args.ladder);
        inputs.file(&p)?;
        read_ladder(&p)?
    };
    let cfg = ForgeConfig {
        ladder,
        global_seed: args.seed,
        canvas: file.canvas,
        frames_per_clip: file.frames_per_clip,
        workers: args.workers,
        filter: file.filter,
    };
    let encoder = transcoder(&file.transcoder)?;

    create_dir(&args.out)?;
    let snapshot = Snapshot {
        forge: &cfg,
        transcoder: &file.transcoder,
        sources: &sources,
    };
    let stage = Stage::begin(args.out.join("run.json"), "forge", &snapshot, inputs)?;
    if stage.skip(args.resume) {
        return Ok(());
    }
    let manifest = forge(&sources, &cfg, encoder.as_ref(), &args.out)?;
    let warned = manifest.clips.iter().filter(|c| !c.warnings.is_empty()).count();
    log::info!(
        "forged {} clips from {} sources ({} with warnings)",
        manifest.clips.len(),
        manifest.sources.len(),
        warned
    );
    stage.finish(&[args.out.join("manifest.json")])?;
    Ok(())
}
