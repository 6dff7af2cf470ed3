use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;

use commands::{CountArgs, EvaluateArgs, ExtractArgs, FinetuneArgs, PretrainArgs, ReportArgs, SynthArgs};

/// Contrastive pretraining on paired vessel graphs or images and tabular
/// records, then supervised fine-tuning and evaluation.
#[derive(Parser)]
#[command(name = "vesselclip", version)]
struct Cli {
    /// Upper bound on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file of defaults; command-line flags win.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort directory.
    Synth(SynthArgs),
    /// Turn binary vessel masks into graph JSON files.
    ExtractGraph(ExtractArgs),
    /// Contrastive pretraining of the image and tabular towers.
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning and test evaluation of one method.
    Finetune(FinetuneArgs),
    /// Re-evaluate a fine-tuned model on the test rows.
    Evaluate(EvaluateArgs),
    /// Parameter counts (and optionally per-epoch times) per pipeline.
    CountParams(CountArgs),
    /// Aggregate evaluation reports into a results table.
    Report(ReportArgs),
}

/// Bad invocation: unknown flag or config key, unreadable config.
#[derive(Debug)]
pub struct UsageError(pub String);

fn run(argv: Vec<String>) -> Result<(), Failure> {
    let root = Cli::command();
    let argv = config::merge(argv, &root).map_err(Failure::Usage)?;
    let matches = root.try_get_matches_from(&argv).map_err(Failure::Clap)?;
    let cli = Cli::from_arg_matches(&matches).map_err(Failure::Clap)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(UsageError("--threads must be at least 1".into())));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(UsageError(e.to_string())))?;
    }
    let result = match cli.command {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::ExtractGraph(a) => commands::extract_graph(a),
        Cmd::Pretrain(a) => commands::pretrain(a),
        Cmd::Finetune(a) => commands::finetune(a),
        Cmd::Evaluate(a) => commands::evaluate(a),
        Cmd::CountParams(a) => commands::count_params(a),
        Cmd::Report(a) => commands::report(a),
    };
    result.map_err(Failure::Run)
}

enum Failure {
    Clap(clap::Error),
    Usage(UsageError),
    Run(anyhow::Error),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Clap(e)) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            eprint!("vesselclip: usage: {}", msg.strip_prefix("error: ").unwrap_or(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Usage(UsageError(msg))) => {
            eprintln!("vesselclip: usage: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("vesselclip: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
