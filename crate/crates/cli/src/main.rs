use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Debug, Parser)]
#[command(name = "binlstm", version, about = "Multi-level binarized LSTM inference")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Suppress warnings and informational tables.
    #[arg(long, global = true)]
    quiet: bool,

    /// Print the result as one JSON object.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a full-precision model file.
    Quantize(QuantizeArgs),
    /// Print the predicted label of every dataset row.
    Infer(InferArgs),
    /// Accuracy on a dataset, optionally against a reference model.
    Eval(EvalArgs),
    /// Time a forward pass and report per-step operation counts.
    Bench(BenchArgs),
    /// Delay estimate and the bundled reference table.
    Delay(DelayArgs),
    /// Write a synthetic sign-mean dataset.
    GenData(GenDataArgs),
    /// Write the hand-built integrator model (or a random one).
    MakeToy(MakeToyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BiasArg {
    Fp,
    Mlb,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// b_lstm, mubinn1 or mubinn2.
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 1)]
    act_levels: usize,
    #[arg(long, default_value_t = 1)]
    weight_levels: usize,
    /// Round fitted weight scales to powers of two.
    #[arg(long)]
    pow2: bool,
    /// Keep recurrent weights in full precision (mubinn1 only).
    #[arg(long)]
    no_binarize_recurrent: bool,
    #[arg(long, value_enum, default_value = "fp")]
    bias: BiasArg,
    /// Treat configuration fix-ups as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Full-precision reference model.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Model to time. Without it a random model is built and quantized.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    /// Hidden units of the random model.
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    /// T=1300, F=32, hidden=100.
    #[arg(long = "paper-shape")]
    large_shape: bool,
    /// Quantization of the random model.
    #[arg(long, default_value = "mubinn2")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    act_levels: usize,
    #[arg(long, default_value_t = 3)]
    weight_levels: usize,
    /// Sequences to time.
    #[arg(long, default_value_t = 4)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct DelayArgs {
    /// Level count or "fp".
    #[arg(long)]
    act_levels: Option<String>,
    /// Level count or "fp".
    #[arg(long)]
    weight_levels: Option<String>,
    /// `key = value` calibration file for the delay model.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Print the bundled reference table with speedups.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    /// T=1300, F=32.
    #[arg(long = "paper-shape")]
    large_shape: bool,
}

#[derive(Debug, Args)]
struct MakeToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    /// Uniform random weights instead of the integrator.
    #[arg(long)]
    random: bool,
    /// Classes of the random model.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Weight range of the random model.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = output::Context {
        seed: cli.seed,
        quiet: cli.quiet,
        json: cli.json,
    };
    let result = match cli.command {
        Command::Quantize(a) => commands::quantize(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
        Command::Delay(a) => commands::delay(&ctx, a),
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::MakeToy(a) => commands::make_toy(&ctx, a),
    };
    match result {
        Ok(report) => match report.emit(&ctx) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: writing output: {e}");
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            ExitCode::FAILURE
        }
    }
}

/// One line from an error chain, skipping causes the outer messages already
/// spell out.
fn diagnostic(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if line.contains(&msg) {
            continue;
        }
        if !line.is_empty() {
            line.push_str(": ");
        }
        line.push_str(&msg);
    }
    line.replace('\n', " ")
}
