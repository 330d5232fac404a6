use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobigg::experiments::{aggregate, run_experiment, ExperimentKind, ExperimentSpec, ResultTable};
use mobigg::Error;

#[derive(Parser)]
#[command(name = "mobigg", version, about = "Monte Carlo experiments for the mobile geometric graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` parameter file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// CSV output; metadata goes to `<out>.meta.json`
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "MOBIGG_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Detection times of a target
    Detect(RunArgs),
    /// Coverage times of a compact set
    Cover(RunArgs),
    /// Percolation times of a target
    Perc(RunArgs),
    /// Broadcast times on the torus
    Broadcast(RunArgs),
    /// Wiener sausage volume
    Sausage(RunArgs),
    /// Three-stage coupling runs
    Couple(RunArgs),
    /// Dense-cell fractions of a tessellation
    Density(RunArgs),
    /// Critical intensity calibration
    Calibrate(RunArgs),
    /// Pool CSV outputs with identical columns into one summary CSV
    Aggregate {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), (u8, Error)> {
    let mut spec =
        ExperimentSpec::from_config_file(kind, &args.config, args.seed, args.out).map_err(|e| (2, e))?;
    if let Some(n) = args.threads {
        spec = spec.with_threads(n);
    }
    spec.validate().map_err(|e| (2, e))?;
    let table = run_experiment(&spec).map_err(|e| (3, e))?;
    eprintln!("{} rows written to {}", table.rows.len(), spec.output_path.display());
    Ok(())
}

fn main() -> ExitCode {
    use ExperimentKind as K;
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => run(K::Detect, a),
        Command::Cover(a) => run(K::Cover, a),
        Command::Perc(a) => run(K::Perc, a),
        Command::Broadcast(a) => run(K::Broadcast, a),
        Command::Sausage(a) => run(K::Sausage, a),
        Command::Couple(a) => run(K::Couple, a),
        Command::Density(a) => run(K::Density, a),
        Command::Calibrate(a) => run(K::Calibrate, a),
        Command::Aggregate { out, inputs } => inputs
            .iter()
            .map(|p| ResultTable::read_csv(p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| (3, e))
            .and_then(|tables| aggregate(&tables).map_err(|e| (2, e)))
            .and_then(|s| s.write_csv(&out).map_err(|e| (3, e))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
