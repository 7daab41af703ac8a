use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cotah::config::PipelineConfig;
use cotah::pipeline::{compare_runs, read_report, run_stage, write_toy_setup, Stage};
use cotah::Result;

#[derive(Parser)]
#[command(
    name = "cotah",
    version,
    about = "Conversational QA with synthetic history augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the artifact directory.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dev corpus into dev and test halves.
    Split(RunArgs),
    /// Train the question generator.
    #[command(name = "train-qg")]
    TrainQg(RunArgs),
    /// Score the generator on the dev half (BLEU-1/4, ROUGE-L).
    #[command(name = "eval-qg")]
    EvalQg(RunArgs),
    /// Mine candidate answers from the training corpus.
    Mine(RunArgs),
    /// Generate synthetic questions for mined candidates.
    Generate(RunArgs),
    /// Filter and sample synthetic questions into augmented histories.
    Select(RunArgs),
    /// Train the reader with consistency regularization.
    #[command(name = "train-qa")]
    TrainQa(RunArgs),
    /// Predict answers on the test half.
    Evaluate(RunArgs),
    /// Aggregate F1, HEQ-Q, HEQ-D and per-turn F1.
    Report(RunArgs),
    /// Run every stage in order.
    All(RunArgs),
    /// Print metric deltas between two report.json files (b minus a).
    Compare { a: PathBuf, b: PathBuf },
    /// Write a synthetic corpus and a config that runs on it.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        dialogs: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
    },
}

fn load(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &args.workdir {
        cfg.workdir = dir.clone();
    }
    Ok(cfg)
}

fn stage(stage: Stage, args: &RunArgs) -> Result<()> {
    let cfg = load(args)?;
    println!("{stage}: {}", run_stage(stage, &cfg)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(a) => stage(Stage::Split, &a),
        Command::TrainQg(a) => stage(Stage::TrainQg, &a),
        Command::EvalQg(a) => stage(Stage::EvalQg, &a),
        Command::Mine(a) => stage(Stage::Mine, &a),
        Command::Generate(a) => stage(Stage::Generate, &a),
        Command::Select(a) => stage(Stage::Select, &a),
        Command::TrainQa(a) => stage(Stage::TrainQa, &a),
        Command::Evaluate(a) => stage(Stage::Evaluate, &a),
        Command::Report(a) => stage(Stage::Report, &a),
        Command::All(a) => {
            let cfg = load(&a)?;
            for s in Stage::ALL {
                println!("{s}: {}", run_stage(s, &cfg)?);
            }
            Ok(())
        }
        Command::Compare { a, b } => {
            print!("{}", compare_runs(&read_report(&a)?, &read_report(&b)?)?);
            Ok(())
        }
        Command::Toy { out, dialogs, seed } => {
            let cfg = write_toy_setup(&out, dialogs, seed)?;
            println!("wrote {}", cfg.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
