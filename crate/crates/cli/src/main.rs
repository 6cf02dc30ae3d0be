mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};

use fairseg::homotopy::ScheduleKind;
use fairseg::losses::FairnessVariant;
use fairseg::perturb::PerturbKind;
use fairseg::trainer::TrainMode;

#[derive(Debug, Parser)]
#[command(
    name = "fairseg",
    version,
    about = "Fairness- and robustness-aware segmentation on synthetic faces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic face-parsing dataset.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Robustness sweep of a checkpoint over perturbation kinds and severities.
    Eval(EvalArgs),
    /// Per-attribute subgroup mIoU of a checkpoint.
    FairnessReport(FairnessArgs),
    /// Tabulate and plot a homotopy schedule.
    SchedulePlot(ScheduleArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.5)]
    bias_contrast: f64,
    #[arg(long, default_value_t = 0.05)]
    bias_noise: f64,
}

/// How a dataset directory is split into train and test parts.
#[derive(Debug, Clone, Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "multi", value_parser = mode_parser())]
    mode: TrainMode,
    /// Defaults to `linear`; ignored in single mode.
    #[arg(long, value_parser = schedule_parser())]
    schedule: Option<ScheduleKind>,
    #[arg(long, default_value = "variance", value_parser = fairness_parser())]
    fairness: FairnessVariant,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = fairseg::losses::DEFAULT_SIGMA_R)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Binary attributes the fairness term compares.
    #[arg(long, value_delimiter = ',', default_value = "dark_skin")]
    attributes: Vec<String>,
    #[command(flatten)]
    split: SplitArgs,
    /// Record per-epoch wall time in the log (makes the log non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    severities: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "gaussian_noise,blur,occlusion,salt_pepper,brightness,darkness",
        value_parser = kind_parser()
    )]
    kinds: Vec<PerturbKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "test", value_parser = subset_parser())]
    subset: Subset,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args)]
struct FairnessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to every attribute in the dataset.
    #[arg(long, value_delimiter = ',')]
    attributes: Vec<String>,
    #[arg(long, default_value = "test", value_parser = subset_parser())]
    subset: Subset,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, default_value = "linear", value_parser = schedule_parser())]
    schedule: ScheduleKind,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "variance", value_parser = fairness_parser())]
    fairness: FairnessVariant,
    /// Deliberately break the conv1 backward pass; the check must then fail.
    #[arg(long)]
    corrupt: bool,
}

fn mode_parser() -> impl TypedValueParser<Value = TrainMode> {
    PossibleValuesParser::new(["single", "multi"]).map(|s| s.parse::<TrainMode>().unwrap())
}

fn schedule_parser() -> impl TypedValueParser<Value = ScheduleKind> {
    PossibleValuesParser::new(ScheduleKind::ALL.map(ScheduleKind::token))
        .map(|s| s.parse::<ScheduleKind>().unwrap())
}

fn fairness_parser() -> impl TypedValueParser<Value = FairnessVariant> {
    PossibleValuesParser::new(["variance", "pergroup"])
        .map(|s| s.parse::<FairnessVariant>().unwrap())
}

fn kind_parser() -> impl TypedValueParser<Value = PerturbKind> {
    PossibleValuesParser::new(PerturbKind::ALL.map(PerturbKind::token))
        .map(|s| s.parse::<PerturbKind>().unwrap())
}

fn subset_parser() -> impl TypedValueParser<Value = Subset> {
    PossibleValuesParser::new(["train", "test", "all"]).map(|s| match s.as_str() {
        "train" => Subset::Train,
        "test" => Subset::Test,
        _ => Subset::All,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::FairnessReport(a) => commands::fairness_report(a),
        Command::SchedulePlot(a) => commands::schedule_plot(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                fairseg::Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
