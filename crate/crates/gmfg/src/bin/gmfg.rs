//! Command-line driver for the graphon mean field game toolkit.
//!
//! Exit codes: 0 success, 1 configuration or user error, 2 the solver did
//! not converge within its budget, 3 numerical blow-up or domain failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gmfg::config::ExperimentConfig;
use gmfg::error::Error;
use gmfg::runner;

#[derive(Parser)]
#[command(name = "gmfg", version, about = "Graphon mean field game solver and finite-player simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, clap::Args)]
struct CommonArgs {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: a fresh timestamped directory under ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the limiting game and write flow/gradient/feedback artifacts.
    Solve(CommonArgs),
    /// Simulate the finite-player systems under the constructed profile.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directory holding a previous `solve` (defaults to --out).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Exploitability and monotonicity diagnostics.
    Nash {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Convergence study across system sizes with slopes and plots.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Step-graphon approximation sweep and cut-norm audit.
    GraphonStudy(CommonArgs),
    /// Pathwise common-noise consistency audit.
    CommonNoise(CommonArgs),
    /// Summarize a run directory into report.md.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::UnknownModel(_)
        | Error::UnknownGraphon(_)
        | Error::Contract(_)
        | Error::Size(_)
        | Error::NotApplicable(_)
        | Error::Nondegeneracy(_)
        | Error::MaximizerAmbiguity(_)
        | Error::Io(_) => 1,
        Error::BlowUp(_) | Error::Oscillation { .. } | Error::DomainTooSmall(_) => 3,
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.simulation.master_seed = seed;
    }
    Ok(cfg)
}

/// Ensures a solved run directory exists: reuses `run` (or `out`) when it
/// already holds a solution, otherwise solves into `out` first.
fn ensure_solved(
    cfg: &ExperimentConfig,
    run: Option<PathBuf>,
    out: &PathBuf,
) -> Result<(PathBuf, bool), Error> {
    let candidate = run.unwrap_or_else(|| out.clone());
    if candidate.join("flow.csv").exists() && candidate.join("meta.json").exists() {
        return Ok((candidate, true));
    }
    let converged = runner::cmd_solve(cfg, out)?;
    Ok((out.clone(), converged))
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("GMFG_THREADS") {
        let threads: usize = threads
            .parse()
            .map_err(|_| Error::Config("GMFG_THREADS must be a positive integer".into()))?;
        if threads == 0 {
            return Err(Error::Config("GMFG_THREADS must be a positive integer".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    }

    match cli.command {
        Command::Solve(args) => {
            let cfg = load_config(&args)?;
            let out = runner::resolve_out(args.out, "solve")?;
            let converged = runner::cmd_solve(&cfg, &out)?;
            println!("solve: wrote {}", out.display());
            Ok(if converged { 0 } else { 2 })
        }
        Command::Simulate { common, run } => {
            let cfg = load_config(&common)?;
            let out = runner::resolve_out(common.out, "simulate")?;
            let (run_dir, converged) = ensure_solved(&cfg, run, &out)?;
            runner::cmd_simulate(&cfg, &run_dir, &out)?;
            println!("simulate: wrote {}", out.display());
            Ok(if converged { 0 } else { 2 })
        }
        Command::Nash { common, run } => {
            let cfg = load_config(&common)?;
            let out = runner::resolve_out(common.out, "nash")?;
            let (run_dir, converged) = ensure_solved(&cfg, run, &out)?;
            runner::cmd_nash(&cfg, &run_dir, &out)?;
            println!("nash: wrote {}", out.display());
            Ok(if converged { 0 } else { 2 })
        }
        Command::Convergence { common, run } => {
            let cfg = load_config(&common)?;
            let out = runner::resolve_out(common.out, "convergence")?;
            let (run_dir, converged) = ensure_solved(&cfg, run, &out)?;
            runner::cmd_convergence(&cfg, &run_dir, &out)?;
            println!("convergence: wrote {}", out.display());
            Ok(if converged { 0 } else { 2 })
        }
        Command::GraphonStudy(args) => {
            let cfg = load_config(&args)?;
            let out = runner::resolve_out(args.out, "graphon-study")?;
            runner::cmd_graphon_study(&cfg, &out)?;
            println!("graphon-study: wrote {}", out.display());
            Ok(0)
        }
        Command::CommonNoise(args) => {
            let cfg = load_config(&args)?;
            let out = runner::resolve_out(args.out, "common-noise")?;
            let worst = runner::cmd_common_noise(&cfg, &out)?;
            println!("common-noise: worst pathwise error {worst:.3e}, wrote {}", out.display());
            Ok(0)
        }
        Command::Report { common, run } => {
            let cfg = load_config(&common)?;
            let _ = cfg; // the report only reads artifacts, config is validated for consistency
            let out = runner::resolve_out(common.out, "report")?;
            let run_dir = run.ok_or_else(|| Error::Config("report needs --run".into()))?;
            runner::cmd_report(&run_dir, &out)?;
            println!("report: wrote {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
