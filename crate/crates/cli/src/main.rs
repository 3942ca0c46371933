//! `shishu` command-line entry point.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

mod ablate;
mod bench;
mod count;
mod emd;
mod eval;
mod generate;
mod output;
mod probe;
mod source;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "shishu",
    version,
    about = "Train, probe and benchmark attention-pruned decoder stacks"
)]
struct Cli {
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a model on a byte-level corpus.
    Train(train::TrainArgs),
    /// Continue a prompt with a trained checkpoint.
    Generate(generate::GenerateArgs),
    /// Fit linear maps to attention input/output pairs.
    Probe(probe::ProbeArgs),
    /// Adjacent-layer MLP weight similarity.
    Emd(emd::EmdArgs),
    /// Latency and memory of a parent model against a pruned one.
    Bench(bench::BenchArgs),
    /// Train a grid of layer layouts with one shared budget.
    Ablate(ablate::AblateArgs),
    /// Print the parameter count of a configuration.
    CountParams(count::CountArgs),
    /// Perplexity of a checkpoint on a corpus.
    Eval(eval::EvalArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => train::run(args),
        Command::Generate(args) => generate::run(args),
        Command::Probe(args) => probe::run(args),
        Command::Emd(args) => emd::run(args),
        Command::Bench(args) => bench::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::CountParams(args) => count::run(args),
        Command::Eval(args) => eval::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            // --help and --version are reported through the error path too
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
