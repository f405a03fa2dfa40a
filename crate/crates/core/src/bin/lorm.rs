use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorm::harness::{run_experiment, ExperimentSpec, OutputFormat, Task};
use lorm::Error;

#[derive(Parser)]
#[command(name = "lorm", version, about = "Learned pruning for Cloud-RAN network power minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train/test instance batches.
    Generate(Common),
    /// Certified branch-and-bound on the test batch.
    SolveExact(Common),
    /// DAgger training; writes model.json.
    Train(Common),
    /// Learned search on the test batch with model.json.
    SolveLorm(Common),
    /// Self-imitation transfer of model.json to the target task.
    Transfer(Common),
    /// GSBF and RMINLP heuristics on the test batch.
    Baseline(Common),
    /// Expected search effort: recurrences, closed forms, simulation.
    Theory(Common),
    /// Train, then compare every method on the test batch.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum, default_value = "table")]
    format: OutputFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, c) = match cli.command {
        Command::Generate(c) => (Task::Generate, c),
        Command::SolveExact(c) => (Task::SolveExact, c),
        Command::Train(c) => (Task::Train, c),
        Command::SolveLorm(c) => (Task::SolveLorm, c),
        Command::Transfer(c) => (Task::Transfer, c),
        Command::Baseline(c) => (Task::Baseline, c),
        Command::Theory(c) => (Task::Theory, c),
        Command::Bench(c) => (Task::Bench, c),
    };
    let spec = ExperimentSpec {
        task,
        config: c.config,
        seed: c.seed,
        out: c.out,
        workers: c.workers,
    };
    match run_experiment(&spec) {
        Ok(report) => {
            print!("{}", report.render(c.format));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("lorm {}: {e}", task.name());
            ExitCode::from(match e {
                Error::Config(_) | Error::MissingArtifact(_) => 2,
                Error::InfeasibleInstance => 3,
                _ => 1,
            })
        }
    }
}
