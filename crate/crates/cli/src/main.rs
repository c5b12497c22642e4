//! `aqa`: batch workflows for structured action-quality assessment outputs.
//!
//! Exit codes: 0 ok, 1 I/O, 2 schema or config, 3 invariant, 4 id
//! alignment, 5 numeric failure during training.

mod commands;
mod fail;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aqa_core::grpo::AdvantageMode;
use aqa_core::metrics::ReportFormat;

#[derive(Parser)]
#[command(name = "aqa", version, about = "Score, evaluate and simulate structured action-quality assessments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an annotation JSONL file line by line.
    Validate(ValidateArgs),
    /// Compute per-instance reward breakdowns for prediction texts.
    Score(ScoreArgs),
    /// Corpus-level metrics for prediction texts.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic annotation corpus and its QA pairs.
    Gen(GenArgs),
    /// Train the toy policy with group-relative optimisation.
    TrainSim(TrainArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Directory for the run manifest; printed to stderr when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// JSONL of `{"id", "prediction"}` or QA `{"source", "answer"}` records.
    #[arg(long)]
    predictions: PathBuf,
    /// Reward config (TOML).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Divide temporal reward by max(|gt|, |pred|) instead of the match count.
    #[arg(long)]
    strict_temporal: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Evaluation config (TOML): `parse_policy` and `[schema]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct GenArgs {
    /// Synthetic corpus config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (annotation JSONL).
    #[arg(long)]
    annotations: PathBuf,
    /// Training config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reward config (TOML).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    strict_temporal: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Table => ReportFormat::Table,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    BestOfG,
    GroupRelative,
}

impl From<Mode> for AdvantageMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::BestOfG => AdvantageMode::BestOfG,
            Mode::GroupRelative => AdvantageMode::GroupRelative,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIERO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => commands::validate(&a.annotations, a.out.as_deref()),
        Command::Score(a) => commands::score(&commands::ScoreOptions {
            annotations: a.annotations,
            predictions: a.predictions,
            weights: a.weights,
            strict_temporal: a.strict_temporal,
            out: a.out,
            format: a.format.into(),
        }),
        Command::Evaluate(a) => commands::evaluate(&commands::EvaluateOptions {
            annotations: a.annotations,
            predictions: a.predictions,
            config: a.config,
            out: a.out,
            format: a.format.into(),
        }),
        Command::Gen(a) => commands::gen(a.config.as_deref(), a.seed, &a.out),
        Command::TrainSim(a) => commands::train_sim(&commands::TrainOptions {
            annotations: a.annotations,
            config: a.config,
            weights: a.weights,
            seed: a.seed,
            mode: a.mode.map(Into::into),
            strict_temporal: a.strict_temporal,
            out: a.out,
            format: a.format.into(),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
