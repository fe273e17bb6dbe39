use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use weakhoi::eval::Protocol;
use weakhoi::model::InferenceMode;
use weakhoi_cli::{
    cmd_eval, cmd_export_embeddings, cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_train, CliResult,
    Overrides, RunConfig,
};

#[derive(Parser)]
#[command(name = "weakhoi", version, about = "Weakly supervised HOI detection on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    protocol: Option<ProtocolArg>,

    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its vocabulary.
    GenData,
    /// Train from image-level labels.
    Train,
    /// Write detections for a dataset.
    Infer,
    /// Compute mAP of a detections file.
    Eval,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Export pair features and bank rows as CSV.
    ExportEmbeddings,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Correct,
    Flawed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    BankSimilarity,
}

fn run(cli: Cli) -> CliResult<String> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out,
        protocol: cli.protocol.map(|p| match p {
            ProtocolArg::Correct => Protocol::Correct,
            ProtocolArg::Flawed => Protocol::Flawed,
        }),
        mode: cli.mode.map(|m| match m {
            ModeArg::Full => InferenceMode::Full,
            ModeArg::BankSimilarity => InferenceMode::BankSimilarity,
        }),
    };
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg, &ov),
        Command::Train => cmd_train(&cfg, &ov),
        Command::Infer => cmd_infer(&cfg, &ov),
        Command::Eval => cmd_eval(&cfg, &ov),
        Command::Gradcheck => cmd_gradcheck(&cfg, &ov),
        Command::ExportEmbeddings => cmd_export_embeddings(&cfg, &ov),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
