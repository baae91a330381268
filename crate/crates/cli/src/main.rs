use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intops_cli::commands::{execute, Command, Outcome};
use intops_cli::scenario;

#[derive(Parser)]
#[command(
    name = "intops",
    version,
    about = "Integral operators on unbounded domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Apply the scenario operator to its input.
    Apply(Common),
    /// Solve f = g + lambda K f by Nystrom discretisation.
    SolveFredholm(Common),
    /// Find a fixed point of a Hammerstein or Urysohn operator.
    FixedPoint(Common),
    /// Check the kernel conditions.
    CheckKernel(Common),
    /// Certify relative compactness of the image of the unit ball.
    Certify(Common),
    /// Compare a Volterra operator with its mollified Fredholm surrogates.
    VolterraApprox(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: the scenario output_dir or runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::Apply(c) => (Command::Apply, c),
        Sub::SolveFredholm(c) => (Command::SolveFredholm, c),
        Sub::FixedPoint(c) => (Command::FixedPoint, c),
        Sub::CheckKernel(c) => (Command::CheckKernel, c),
        Sub::Certify(c) => (Command::Certify, c),
        Sub::VolterraApprox(c) => (Command::VolterraApprox, c),
    };
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let loaded = match scenario::load(&common.scenario) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let seed = common.seed.or(loaded.scenario.seed);
    let out = common
        .out
        .unwrap_or_else(|| match &loaded.scenario.output_dir {
            Some(d) => loaded.resolve(d),
            None => PathBuf::from("runs").join(&loaded.scenario.name),
        });
    match execute(cmd, &loaded, seed, &out) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotCertified(why)) => {
            eprintln!("not certified: {why}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
