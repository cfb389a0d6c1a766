use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hdrvqa_core::contrastive::{ModelConfig, TrainConfig};
use hdrvqa_core::quality::RegressorSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::evaluate::{self, EvaluateArgs, ModeArg};
use crate::extract::{self, ExtractArgs, InferenceArgs};
use crate::finetune::{self, FinetuneArgs, FinetuneFile};
use crate::run::{create_dir, io_error, read_toml, relative_to};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Epochs,
    Init,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated: epoch counts, or `random` / `sdr-pretrained`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    /// Base pipeline config (TOML); relative paths follow the file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: bool,
}

fn default_stride() -> usize {
    1
}

fn default_trials() -> usize {
    100
}

fn default_mode() -> ModeArg {
    ModeArg::Nr
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateFile {
    /// Training corpus manifest.
    pub manifest: PathBuf,
    /// Evaluation videos: manifest or `video_id,path` CSV.
    pub videos: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: ModeArg,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Encoder weights for pretrained initialization.
    #[serde(default)]
    pub sdr_checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub regressor: RegressorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub label: String,
    pub report: PathBuf,
    pub trials: usize,
    pub median_srocc: f64,
    pub std_srocc: f64,
    pub median_lcc: f64,
    pub std_lcc: f64,
    pub median_rmse: f64,
    pub std_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn markdown(&self) -> String {
        let head = if self.axis == "epochs" { "Epochs" } else { "SDR pre-training" };
        let mut s = format!("| {head} | SROCC | LCC | RMSE |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {:.4} ({:.4}) | {:.4} ({:.4}) | {:.4} ({:.4}) |",
                r.label, r.median_srocc, r.std_srocc, r.median_lcc, r.std_lcc, r.median_rmse, r.std_rmse
            );
        }
        s
    }
}

/// One sub-run: (directory tag, table label, fine-tuning epochs, init).
fn plan(axis: Axis, values: &[String], base: &AblateFile) -> CliResult<Vec<(String, String, usize, String)>> {
    let pretrained = || -> CliResult<String> {
        base.sdr_checkpoint
            .as_ref()
            .map(|p| p.display().to_string())
            .ok_or_else(|| CliError::config("sdr-pretrained initialization needs sdr_checkpoint in the base config"))
    };
    let default_init = match &base.sdr_checkpoint {
        Some(p) => p.display().to_string(),
        None => "random".into(),
    };
    values
        .iter()
        .map(|v| match axis {
            Axis::Epochs => {
                let n: usize = v
                    .parse()
                    .map_err(|_| CliError::usage(format!("epoch value {v:?} is not a nonnegative integer")))?;
                Ok((format!("epochs-{n}"), n.to_string(), n, default_init.clone()))
            }
            Axis::Init => match v.as_str() {
                "random" => Ok(("init-random".into(), "No".into(), base.train.epochs, "random".into())),
                "sdr-pretrained" => Ok(("init-sdr-pretrained".into(), "Yes".into(), base.train.epochs, pretrained()?)),
                _ => Err(CliError::usage(format!(
                    "init value {v:?} must be random or sdr-pretrained"
                ))),
            },
        })
        .collect()
}

fn write_toml(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| CliError::new("PARSE_ERROR", e.to_string()))?;
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn run(args: &AblateArgs) -> CliResult<()> {
    let values: Vec<String> = args.values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::usage("--values needs at least one value"));
    }
    let mut base: AblateFile = read_toml(&args.config)?;
    for p in [&mut base.manifest, &mut base.videos, &mut base.labels] {
        *p = relative_to(&args.config, p);
    }
    if let Some(p) = &mut base.sdr_checkpoint {
        *p = relative_to(&args.config, p);
    }
    let runs = plan(args.axis, &values, &base)?;
    create_dir(&args.out)?;

    let mut rows = Vec::new();
    for ((tag, label, epochs, init), value) in runs.into_iter().zip(&values) {
        log::info!("ablation run {tag}");
        let dir = args.out.join(&tag);
        create_dir(&dir)?;
        let mut train = base.train.clone();
        train.epochs = epochs;
        if epochs > 0 && train.warmup_epochs >= epochs {
            train.warmup_epochs = epochs - 1;
            log::warn!("{tag}: warmup shortened to {} epochs", train.warmup_epochs);
        }
        let ft_config = dir.join("finetune.toml");
        write_toml(
            &ft_config,
            &FinetuneFile {
                model: base.model.clone(),
                train,
            },
        )?;
        let spec_path = dir.join("regressor.toml");
        write_toml(&spec_path, &base.regressor)?;
        let ft_out = dir.join("finetune");
        finetune::run(&FinetuneArgs {
            manifest: base.manifest.clone(),
            init,
            config: ft_config,
            out: ft_out.clone(),
            seed: None,
            resume: args.resume,
        })?;
        let bank = dir.join("bank.bin");
        extract::run(&ExtractArgs {
            videos: base.videos.clone(),
            ckpt: finetune::final_checkpoint(&ft_out),
            stride: base.stride,
            out: bank.clone(),
            csv: None,
            inference: InferenceArgs::default(),
            resume: args.resume,
        })?;
        let report_path = dir.join("report.json");
        let report = evaluate::run(&EvaluateArgs {
            bank,
            labels: base.labels.clone(),
            mode: base.mode,
            trials: base.trials,
            seed: base.seed,
            out: report_path.clone(),
            spec: Some(spec_path),
            head_out: None,
            resume: args.resume,
        })?;
        let s = report
            .summary
            .ok_or_else(|| CliError::new("EVALUATION_FAILED", format!("{tag}: every trial failed")))?;
        rows.push(AblationRow {
            value: value.clone(),
            label,
            report: report_path,
            trials: s.per_trial.len(),
            median_srocc: s.median_srocc,
            std_srocc: s.std_srocc,
            median_lcc: s.median_lcc,
            std_lcc: s.std_lcc,
            median_rmse: s.median_rmse,
            std_rmse: s.std_rmse,
        });
    }
    let table = AblationTable {
        axis: match args.axis {
            Axis::Epochs => "epochs".into(),
            Axis::Init => "init".into(),
        },
        rows,
    };
    let json = args.out.join("ablation.json");
    std::fs::write(&json, serde_json::to_string_pretty(&table)? + "\n").map_err(|e| io_error(&json, e))?;
    let md = table.markdown();
    let md_path = args.out.join("ablation.md");
    std::fs::write(&md_path, &md).map_err(|e| io_error(&md_path, e))?;
    print!("{md}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(sdr: Option<&str>) -> AblateFile {
        AblateFile {
            manifest: "m.json".into(),
            videos: "v.csv".into(),
            labels: "l.csv".into(),
            mode: ModeArg::Nr,
            stride: 1,
            trials: 3,
            seed: 0,
            sdr_checkpoint: sdr.map(PathBuf::from),
            model: ModelConfig::new(hdrvqa_core::nn::EncoderKind::ToyCnn),
            train: TrainConfig::default(),
            regressor: RegressorSpec::default(),
        }
    }

    #[test]
    fn epoch_axis_has_one_run_per_value() {
        let v: Vec<String> = ["10", "20", "25", "30"].map(String::from).to_vec();
        let p = plan(Axis::Epochs, &v, &base(None)).unwrap();
        assert_eq!(p.iter().map(|r| r.2).collect::<Vec<_>>(), vec![10, 20, 25, 30]);
        assert!(p.iter().all(|r| r.3 == "random"));
        assert!(plan(Axis::Epochs, &["x".into()], &base(None)).is_err());
    }

    #[test]
    fn init_axis_rows_are_no_and_yes() {
        let v: Vec<String> = ["random", "sdr-pretrained"].map(String::from).to_vec();
        let p = plan(Axis::Init, &v, &base(Some("sdr.ckpt"))).unwrap();
        assert_eq!(p.iter().map(|r| r.1.as_str()).collect::<Vec<_>>(), vec!["No", "Yes"]);
        assert_eq!(p[1].3, "sdr.ckpt");
        assert_eq!(plan(Axis::Init, &v, &base(None)).unwrap_err().class, "CONFIG_INVALID");
    }

    #[test]
    fn table_shape() {
        let row = |label: &str| AblationRow {
            value: label.into(),
            label: label.into(),
            report: "r.json".into(),
            trials: 100,
            median_srocc: 0.5,
            std_srocc: 0.1,
            median_lcc: 0.6,
            std_lcc: 0.1,
            median_rmse: 9.0,
            std_rmse: 1.0,
        };
        let t = AblationTable {
            axis: "init".into(),
            rows: vec![row("No"), row("Yes")],
        };
        let md = t.markdown();
        assert_eq!(md.lines().count(), 4);
        assert!(md.starts_with("| SDR pre-training |"));
        assert!(md.contains("| Yes | 0.5000 (0.1000) |"));
    }
}
