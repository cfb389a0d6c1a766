use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hdrvqa_core::features::FeatureBank;
use hdrvqa_core::quality::{read_labels, run_protocol, EvaluationReport, Mode, QualityHead, RegressorSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{read_toml, record_beside, Inputs, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Nr,
    Fr,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nr => Mode::Nr,
            ModeArg::Fr => Mode::Fr,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// CSV with video_id, content_id, score, condition and, for FR,
    /// reference_id.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Nr)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Regressor search space (TOML); defaults apply when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Also fit a head on every labeled video and write it here.
    #[arg(long)]
    pub head_out: Option<PathBuf>,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    mode: ModeArg,
    trials: usize,
    seed: u64,
    spec: &'a RegressorSpec,
    head: bool,
}

pub fn run(args: &EvaluateArgs) -> CliResult<EvaluationReport> {
    if args.trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let mut inputs = Inputs::default();
    inputs.file(&args.bank)?;
    inputs.file(&args.labels)?;
    let spec: RegressorSpec = match &args.spec {
        Some(p) => {
            inputs.file(p)?;
            read_toml(p)?
        }
        None => RegressorSpec::default(),
    };
    spec.validate()?;
    let snapshot = Snapshot {
        mode: args.mode,
        trials: args.trials,
        seed: args.seed,
        spec: &spec,
        head: args.head_out.is_some(),
    };
    let stage = Stage::begin(record_beside(&args.out), "evaluate", &snapshot, inputs)?;
    if stage.skip(args.resume) {
        return Ok(EvaluationReport::load(&args.out)?);
    }
    let bank = FeatureBank::load(&args.bank)?;
    let labels = read_labels(&args.labels)?;
    let report = run_protocol(&bank, &labels, &spec, args.trials, args.mode.into(), args.seed)?;
    report.save(&args.out)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(p) = &args.head_out {
        let head = QualityHead::fit(&bank, &labels, &spec, args.mode.into(), args.seed)?;
        head.save(p)?;
        outputs.push(p.clone());
    }
    stage.finish(&outputs)?;
    Ok(report)
}

pub fn print_summary(report: &EvaluationReport) {
    match &report.summary {
        Some(s) => println!(
            "median SROCC {:.4} LCC {:.4} RMSE {:.4} over {} trials ({} excluded)",
            s.median_srocc,
            s.median_lcc,
            s.median_rmse,
            s.per_trial.len(),
            report.excluded_trials.len()
        ),
        None => log::warn!("every trial failed; the report has no summary"),
    }
}
