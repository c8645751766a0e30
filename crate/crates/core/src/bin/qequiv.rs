use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qequiv::scenario::{run, Scenario, ScenarioKind, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "qequiv", version, about = "Scenario runner for extended states, quantum diffeomorphisms and alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lattice propagator against the closed form.
    Propagator(Common),
    /// Extended-state pipeline against path enumeration.
    Pipeline(Common),
    /// Quantum-diffeomorphism algebra checks.
    Qdiffeo(Common),
    /// Alignment of branch metrics at a point.
    Align(Common),
    /// Sampled beable invariance.
    Beables(Common),
    /// Quantum fibre bundle validation.
    BundleCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON); defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed overriding the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Propagator(a) => (ScenarioKind::Propagator, a),
        Command::Pipeline(a) => (ScenarioKind::Pipeline, a),
        Command::Qdiffeo(a) => (ScenarioKind::Qdiffeo, a),
        Command::Align(a) => (ScenarioKind::Align, a),
        Command::Beables(a) => (ScenarioKind::Beables, a),
        Command::BundleCheck(a) => (ScenarioKind::BundleCheck, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    }
    let scenario = match &args.scenario {
        Some(path) => Scenario::load(path),
        None => Ok(Scenario::default()),
    };
    let outcome = run(kind, scenario, args.seed, &args.out);
    for e in &outcome.errors {
        eprintln!("{}: {}", e.kind, e.message);
    }
    for f in &outcome.files {
        println!("{}", f.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
