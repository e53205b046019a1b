use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use sdelab_cli::{dispatch, parse_config, resolve, CliError, Subcommand};

/// Numerical laboratory for SGD and online-PCA chains and their diffusion
/// approximations: simulate chains, push densities, and measure weak
/// approximation orders against a deterministic Kolmogorov oracle.
#[derive(Parser)]
#[command(name = "sdelab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel jobs (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed override (replaces the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Simulate SGD trajectories and export them as CSV.
    SgdRun(RunArgs),
    /// Simulate Oja/SGA trajectories on the sphere.
    PcaRun(RunArgs),
    /// Measure weak approximation orders over an eta ladder.
    WeakOrder(RunArgs),
    /// Remainder-decay study of the second-order expansions.
    TaylorStudy(RunArgs),
    /// Contraction, confinement, and norm-preservation checks.
    InvariantSuite(RunArgs),
    /// Push a 1D density through the dual chain operator.
    DensityPush(RunArgs),
}

impl Command {
    fn split(self) -> (Subcommand, RunArgs) {
        match self {
            Command::SgdRun(a) => (Subcommand::SgdRun, a),
            Command::PcaRun(a) => (Subcommand::PcaRun, a),
            Command::WeakOrder(a) => (Subcommand::WeakOrder, a),
            Command::TaylorStudy(a) => (Subcommand::TaylorStudy, a),
            Command::InvariantSuite(a) => (Subcommand::InvariantSuite, a),
            Command::DensityPush(a) => (Subcommand::DensityPush, a),
        }
    }
}

fn run(subcommand: Subcommand, args: RunArgs) -> Result<i32, CliError> {
    if let Some(jobs) = args.jobs {
        // Only the first initialization wins; later runs in one process
        // (tests) keep the existing pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::Io {
        path: args.config.clone(),
        source,
    })?;
    let config = parse_config(&text)?;
    let resolved = resolve(config, subcommand, args.out.as_deref(), args.seed)?;
    let started = std::time::Instant::now();
    let outcome = dispatch(&resolved)?;
    println!("{}", outcome.summary);
    eprintln!(
        "wrote {} ({:.2?})",
        resolved.output_dir.as_deref().unwrap_or("."),
        started.elapsed()
    );
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (subcommand, args) = cli.command.split();
    match run(subcommand, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
