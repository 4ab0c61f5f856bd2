mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "emshap", version, about = "Shapley value attribution with energy-based conditional densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "emshap-out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArg {
    Exact,
    Emshap,
    Sampling,
    Kernel,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
    MlpClassifier,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SquashArg {
    None,
    Sigmoid,
    Clip,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the energy model and proposal on a CSV dataset.
    Train(TrainArgs),
    /// Fit a model from the built-in zoo on a CSV dataset.
    FitModel(FitModelArgs),
    /// Attribute every row of a CSV file.
    Attribute(AttributeArgs),
    /// SIC insertion/deletion curves (and optional MAD) for attributions.
    Evaluate(EvaluateArgs),
    /// Error-bound experiment on the periodic toy data.
    ToyBound(ToyBoundArgs),
    /// Closed-form kernel covariance checks.
    TheoryCheck(TheoryArgs),
    /// Exact Shapley values of a tabulated game or a model.
    ExactShapley(ExactArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column to exclude from the features.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "k-tilde")]
    pub k_tilde: Option<usize>,
    #[arg(long = "zeta-min")]
    pub zeta_min: Option<f64>,
    #[arg(long = "zeta-max")]
    pub zeta_max: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct FitModelArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum, default_value = "linear")]
    pub kind: ModelKind,
    /// Map outputs into [0, 1]; `clip` uses the training prediction range.
    #[arg(long, value_enum, default_value = "clip")]
    pub squash: SquashArg,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct AttributeArgs {
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    /// Zoo model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to explain.
    #[arg(long)]
    pub input: PathBuf,
    /// Background rows; defaults to the input rows.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Checkpoint written by `train` (emshap estimator only).
    #[arg(long)]
    pub emshap: Option<PathBuf>,
    /// Draws per coalition (emshap), permutations (sampling) or coalitions (kernel).
    #[arg(long)]
    pub k: Option<usize>,
    /// Only the first N rows.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Column of the input files to ignore.
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// JSON array written by `attribute`.
    #[arg(long)]
    pub attributions: PathBuf,
    /// Background rows whose mean replaces removed features; defaults to the input.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Second attribution file to compare against by MAD.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct ToyBoundArgs {
    /// Comma-separated Monte Carlo sizes.
    #[arg(long, alias = "K")]
    pub k: Option<String>,
    #[arg(long = "k-ref")]
    pub k_ref: Option<usize>,
    #[arg(long = "test-points")]
    pub test_points: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "k-tilde")]
    pub k_tilde: Option<usize>,
    #[arg(long = "zeta-min")]
    pub zeta_min: Option<f64>,
    #[arg(long = "zeta-max")]
    pub zeta_max: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct TheoryArgs {
    /// Player count; all of 2..=10 when omitted.
    #[arg(long)]
    pub d: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Serialize)]
pub struct ExactArgs {
    /// JSON `{"players": d, "values": [...]}` indexed by observed bitmask.
    #[arg(long, conflicts_with = "model")]
    pub game: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let started = std::time::Instant::now();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::FitModel(a) => commands::fit_model(a),
        Command::Attribute(a) => commands::attribute(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ToyBound(a) => commands::toy_bound(a),
        Command::TheoryCheck(a) => commands::theory_check(a),
        Command::ExactShapley(a) => commands::exact_shapley_cmd(a),
    };
    match result {
        Ok(()) => {
            eprintln!("completed in {:.2}s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (kind, code) = commands::classify(&err);
            let record = serde_json::json!({
                "error": { "kind": kind, "message": format!("{err:#}"), "exit_code": code }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
