mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{LogLevel, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "corpusforge",
    version,
    about = "Pretraining and SFT corpus curation toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON run report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true, value_enum)]
    log_level: Option<LevelArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean text: markup, whitespace, Unicode forms.
    Normalize(commands::NormalizeArgs),
    /// Harm, PII and quality filtering.
    Filter(commands::FilterArgs),
    /// Near-duplicate removal; with --eval, decontamination against eval sets.
    Dedup(commands::DedupArgs),
    /// N-gram language model.
    #[command(subcommand)]
    Lm(commands::LmCommand),
    /// Byte-level BPE tokenizer.
    #[command(subcommand)]
    Tok(commands::TokCommand),
    /// Curriculum stage planning and learning-rate schedule.
    #[command(subcommand)]
    Schedule(commands::ScheduleCommand),
    /// Supervised fine-tuning data cleaning.
    #[command(subcommand)]
    Sft(commands::SftCommand),
    /// Loss-differential contamination analysis.
    Contam(commands::ContamArgs),
    /// normalize, filter, dedup and optional decontamination in one pass.
    Pipeline(commands::PipelineArgs),
    /// Generate synthetic fixture corpora.
    Synth(commands::SynthArgs),
}

fn effective_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if let Some(l) = g.log_level {
        cfg.log_level = match l {
            LevelArg::Error => LogLevel::Error,
            LevelArg::Warn => LogLevel::Warn,
            LevelArg::Info => LogLevel::Info,
            LevelArg::Debug => LogLevel::Debug,
            LevelArg::Trace => LogLevel::Trace,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.global)?;
    env_logger::Builder::new()
        .filter_level(cfg.log_level.filter())
        .format_timestamp(None)
        .init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build_global()
        .map_err(CliError::invalid)?;
    commands::dispatch(cli.command, cfg, cli.global.report.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
