use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use popmf::harness::{self, Command, ExperimentConfig, Overrides, RunArtifacts};
use popmf::Error;

#[derive(Parser)]
#[command(name = "popmf", version, about = "Population processes and their mean-field approximations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Density report (theta, lambda) for an interaction matrix
    Density(RunArgs),
    /// Stochastic replicates against the NIMFA and the CMFA
    Compare(RunArgs),
    /// Sup-deviation scaling over a list of population sizes
    Sweep(RunArgs),
    /// Discrete-time chain against the continuous-time process for shrinking xi
    DtConvergence(RunArgs),
    /// Clustered initial condition on nearest-neighbor rings
    Fig1(RunArgs),
    /// Random initial condition on nearest-neighbor rings
    Fig2(RunArgs),
    /// Re-run a recorded experiment and compare its CSVs byte for byte
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Cmd::Density(a)
        | Cmd::Compare(a)
        | Cmd::Sweep(a)
        | Cmd::DtConvergence(a)
        | Cmd::Fig1(a)
        | Cmd::Fig2(a) => a.threads,
        Cmd::Replay { threads, .. } => *threads,
    };
    let result = match threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(cli.command))),
        None => dispatch(cli.command),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// `Ok(false)` when a replay does not reproduce its manifest.
fn dispatch(cmd: Cmd) -> popmf::Result<bool> {
    let (command, args) = match cmd {
        Cmd::Density(a) => (Command::Density, a),
        Cmd::Compare(a) => (Command::Compare, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::DtConvergence(a) => (Command::DtConvergence, a),
        Cmd::Fig1(a) => (Command::Fig1, a),
        Cmd::Fig2(a) => (Command::Fig2, a),
        Cmd::Replay { manifest, out, .. } => {
            let report = harness::replay(&manifest, &out)?;
            for name in &report.matched {
                println!("identical  {name}");
            }
            for name in &report.mismatched {
                println!("DIFFERENT  {name}");
            }
            if !report.is_identical() {
                eprintln!("error: {} file(s) differ from the manifest", report.mismatched.len());
            }
            return Ok(report.is_identical());
        }
    };
    let cfg = ExperimentConfig::load(&args.config)?;
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    let overrides = Overrides {
        seed: args.seed,
        replicates: args.replicates,
    };
    let artifacts = harness::run(command, &cfg, &overrides, &out)?;
    report(&artifacts);
    Ok(true)
}

fn report(a: &RunArtifacts) {
    for (key, value) in &a.summary.values {
        println!("{key} = {value}");
    }
    println!("wrote {} CSV and {} SVG file(s) to {}", a.csvs.len(), a.svgs.len(), a.dir.display());
}
