//! `hdrvqa`: corpus forging, contrastive fine-tuning, feature extraction,
//! quality evaluation, scoring and ablations.

mod ablate;
mod error;
mod evaluate;
mod extract;
mod finetune;
mod forge;
mod predict;
mod run;

use clap::{Parser, Subcommand, ValueEnum};

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "hdrvqa", about = "HDR video quality pipeline", disable_version_flag = true)]
struct Cli {
    /// Print the tool, schema and file-format versions.
    #[arg(long)]
    version: bool,

    #[arg(long, value_enum, default_value_t = LogLevel::Info, global = true)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut clips from long sources and apply the bitrate ladder.
    Forge(forge::ForgeArgs),
    /// Contrastive fine-tuning on a forged corpus.
    Finetune(finetune::FinetuneArgs),
    /// Pool frozen-encoder features per video into a bank.
    Extract(extract::ExtractArgs),
    /// Repeated content-disjoint train/test evaluation of the regressor.
    Evaluate(evaluate::EvaluateArgs),
    /// Score one video with a checkpoint and a fitted head.
    Predict(predict::PredictArgs),
    /// Run the pipeline once per value of an axis and tabulate the results.
    Ablate(ablate::AblateArgs),
}

fn version_text() -> String {
    format!(
        "hdrvqa {}\nmanifest schema {}\ncheckpoint format {}\nfeature bank format {}\nreport schema {}\nrun record schema {}",
        env!("CARGO_PKG_VERSION"),
        hdrvqa_core::ladder::MANIFEST_SCHEMA_VERSION,
        hdrvqa_core::contrastive::CHECKPOINT_FORMAT_VERSION,
        hdrvqa_core::features::BANK_FORMAT_VERSION,
        hdrvqa_core::quality::REPORT_SCHEMA_VERSION,
        run::RUN_SCHEMA_VERSION,
    )
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.version {
        println!("{}", version_text());
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::usage("a subcommand is required (see --help)")),
        Some(Command::Forge(a)) => forge::run(&a),
        Some(Command::Finetune(a)) => finetune::run(&a),
        Some(Command::Extract(a)) => extract::run(&a),
        Some(Command::Evaluate(a)) => evaluate::run(&a).map(|r| evaluate::print_summary(&r)),
        Some(Command::Predict(a)) => predict::run(&a),
        Some(Command::Ablate(a)) => ablate::run(&a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help
            print!("{e}");
            return;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let err = CliError::usage(first);
            eprintln!("{err}");
            std::process::exit(err.exit_code());
        }
    };
    let level = match cli.log_level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
        LogLevel::Trace => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Err(e) = dispatch(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
