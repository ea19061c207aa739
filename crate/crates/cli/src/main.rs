use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frontier_match_cli::{execute, Command, Options};

#[derive(Debug, Parser)]
#[command(name = "frontier-match", version, about = "Matching-frontier analyses of household panels")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for simulation and bootstrap standard errors.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for the cell sweep.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Check the input panel and write validation.json.
    Validate,
    /// Build the configured matching samples.
    BuildSample,
    /// Compute the frontier of every cell.
    Frontier,
    /// Frontier, balance-based selection and ATT for every cell.
    Estimate,
    /// Diffusion curves, adopter categories, fractionalization, comparisons.
    Describe,
    /// Write a synthetic panel with a known treatment effect.
    Simulate,
    /// Everything above except simulate.
    Run,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::BuildSample => Command::BuildSample,
            Cmd::Frontier => Command::Frontier,
            Cmd::Estimate => Command::Estimate,
            Cmd::Describe => Command::Describe,
            Cmd::Simulate => Command::Simulate,
            Cmd::Run => Command::Run,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FRONTIER_MATCH_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let options = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        jobs: cli.jobs,
        strict: cli.strict,
    };
    match execute(cli.command.into(), &options) {
        Ok(outcome) => {
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            ExitCode::from(outcome.exit_code)
        }
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
