use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cohort_fusion::par::Execution;
use cohort_fusion::pipeline::{report_table, Pipeline, PipelineConfig, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Cohort-aware analysis generation and fusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the dataset and split it.
    Synth(RunArgs),
    /// Fit cohorts on the training split.
    Cluster(RunArgs),
    /// Render one prompt per patient.
    Prompt(RunArgs),
    /// Sample analyses from the language model.
    Analyze(RunArgs),
    /// Embed every analysis.
    Embed(RunArgs),
    /// Pretrain and freeze one encoder per task.
    Pretrain(RunArgs),
    /// Train fused and encoder-only heads.
    Train(RunArgs),
    /// Score trained heads on the test split.
    Evaluate(RunArgs),
    /// Train and score one head per number of analyses.
    Sweep(RunArgs),
    /// Run synth through evaluate.
    All(RunArgs),
    /// Print the combined results table of an output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Rerun even if the stage is up to date.
    #[arg(long)]
    force: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long)]
    sequential: bool,
}

fn run(stage: Option<Stage>, args: RunArgs) -> cohort_fusion::Result<()> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let pipeline = Pipeline::new(cfg, RunOptions { force: args.force, exec })?;
    let outcomes = match stage {
        Some(stage) => vec![pipeline.run(stage)?],
        None => pipeline.run_all()?,
    };
    for o in outcomes {
        let state = if o.ran { "done" } else { "up to date" };
        println!("{:<9} {state}", o.stage.as_str());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => run(Some(Stage::Synth), a),
        Command::Cluster(a) => run(Some(Stage::Cluster), a),
        Command::Prompt(a) => run(Some(Stage::Prompt), a),
        Command::Analyze(a) => run(Some(Stage::Analyze), a),
        Command::Embed(a) => run(Some(Stage::Embed), a),
        Command::Pretrain(a) => run(Some(Stage::Pretrain), a),
        Command::Train(a) => run(Some(Stage::Train), a),
        Command::Evaluate(a) => run(Some(Stage::Evaluate), a),
        Command::Sweep(a) => run(Some(Stage::Sweep), a),
        Command::All(a) => run(None, a),
        Command::Report { dir } => report_table(&dir).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
