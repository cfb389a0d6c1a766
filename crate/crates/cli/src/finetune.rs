use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use hdrvqa_core::contrastive::{finetune, Checkpoint, ModelConfig, TrainConfig, TrainingSet, WeightsInit};
use hdrvqa_core::ladder::ManifestFrames;
use serde::{Deserialize, Serialize};

use crate::error::{ckpt_error, CliResult};
use crate::run::{create_dir, io_error, read_toml, Inputs, Stage};

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    /// Corpus manifest written by `forge`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Starting weights: `random` or a checkpoint whose encoder is reused.
    #[arg(long, default_value = "random")]
    pub init: String,
    /// TOML with a `[model]` table and an optional `[train]` table.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneFile {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

pub fn final_checkpoint(out: &Path) -> PathBuf {
    out.join("final.ckpt")
}

pub fn run(args: &FinetuneArgs) -> CliResult<()> {
    let mut file: FinetuneFile = read_toml(&args.config)?;
    let mut inputs = Inputs::default();
    inputs.file(&args.config)?;
    inputs.file(&args.manifest)?;
    file.model.weights_init = if args.init == "random" {
        WeightsInit::Random
    } else {
        let p = PathBuf::from(&args.init);
        if !p.is_file() {
            return Err(ckpt_error(hdrvqa_core::Error::NotFound(p)));
        }
        inputs.file(&p)?;
        WeightsInit::SdrPretrained(p)
    };
    if let Some(s) = args.seed {
        file.train.seed = s;
    }
    file.model.validate()?;
    file.train.validate()?;

    create_dir(&args.out)?;
    let stage = Stage::begin(args.out.join("run.json"), "finetune", &file, inputs)?;
    if stage.skip(args.resume) {
        return Ok(());
    }
    let data = ManifestFrames::open(&args.manifest)?;
    log::info!("{} training frames, corpus {}", data.len(), data.corpus_hash());
    let init = Checkpoint::initial(&file.model, file.train.seed).map_err(ckpt_error)?;

    let log_path = args.out.join("train_log.jsonl");
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut outputs = vec![log_path.clone()];
    let (ckpt, _) = finetune(&data, init, &file.train, |entry, ckpt| {
        let line = serde_json::to_string(entry)?;
        writeln!(log_file, "{line}").map_err(|e| hdrvqa_core::Error::Serialization(e.to_string()))?;
        let p = args.out.join(format!("epoch_{:03}.ckpt", entry.epoch));
        ckpt.save(&p)?;
        outputs.push(p);
        Ok(())
    })?;
    drop(log_file);
    let last = final_checkpoint(&args.out);
    ckpt.save(&last)?;
    outputs.push(last);
    stage.finish(&outputs)?;
    Ok(())
}
