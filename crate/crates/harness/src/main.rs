use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qst_harness::{bench_arch, crossbar_eval, reconstruct, sweep_bases, ExperimentConfig, Outcome, Overrides, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "qst", version, about = "Neural quantum state tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network on one state and write its trace and state.
    Reconstruct(Common),
    /// Find the smallest basis count that reaches the target fidelity.
    SweepBases(Common),
    /// Compare architectures on the same dataset.
    BenchArch(Common),
    /// Replay a trained network on simulated crossbar arrays.
    CrossbarEval(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
}

fn run(cli: Cli) -> qst_harness::Result<Outcome> {
    let (command, common) = match cli.command {
        Command::Reconstruct(c) => ("reconstruct", c),
        Command::SweepBases(c) => ("sweep-bases", c),
        Command::BenchArch(c) => ("bench-arch", c),
        Command::CrossbarEval(c) => ("crossbar-eval", c),
    };
    let overrides = Overrides {
        out: common.out,
        seed: common.seed,
        repeats: common.repeats,
    };
    let config = ExperimentConfig::load(&common.config)?.resolve(&overrides)?;
    match command {
        "reconstruct" => reconstruct(&config),
        "sweep-bases" => sweep_bases(&config).map(|(o, _)| o),
        "bench-arch" => bench_arch(&config).map(|(o, _)| o),
        _ => crossbar_eval(&config).map(|(o, _)| o),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
