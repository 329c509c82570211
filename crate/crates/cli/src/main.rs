//! Command-line driver for the outage-constrained power allocation toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use outage_power_cli::{
    run_experiment, validate_solution, CliError, ExperimentConfig, ProblemKind,
};

#[derive(Parser)]
#[command(
    name = "outage-power",
    about = "Chance-constrained power allocation for multiuser MISO links",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Result CSV destination; stdout when omitted. A resolved copy of the
    /// configuration is written next to it as `<out>.resolved.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario generation seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Experiment configuration (JSON) the solution was produced from.
    #[arg(long)]
    config: PathBuf,
    /// Result CSV to re-certify.
    #[arg(long)]
    solution: PathBuf,
    /// Per-row certification report CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo sample count override.
    #[arg(long)]
    samples: Option<usize>,
    /// Monte Carlo seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize total transmit power under SINR outage constraints.
    Powermin(RunArgs),
    /// Maximize the common SINR target under a power budget.
    Maxmin(RunArgs),
    /// Minimize precoder power under MSE satisfaction constraints.
    Msemin(RunArgs),
    /// Run the sweep described by the config's `sweep` block.
    Sweep(RunArgs),
    /// Re-certify a result CSV by Monte Carlo simulation.
    Validate(ValidateArgs),
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn check_kind(cfg: &ExperimentConfig, expected: &[ProblemKind]) -> Result<(), CliError> {
    if expected.contains(&cfg.problem) {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "config problem `{}` does not match this subcommand",
            cfg.problem.name()
        )))
    }
}

fn run(args: &RunArgs, expected: &[ProblemKind], want_sweep: Option<bool>) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    check_kind(&cfg, expected)?;
    match want_sweep {
        Some(true) if cfg.sweep.is_none() => {
            return Err(CliError::Config("this subcommand needs a `sweep` block".into()))
        }
        Some(false) => cfg.sweep = None,
        _ => {}
    }
    if let Some(seed) = args.seed {
        if let Some(sc) = cfg.scenario.as_mut() {
            sc.seed = seed;
        }
        if let Some(bc) = cfg.broadcast.as_mut() {
            bc.seed = seed;
        }
    }
    let out = run_experiment(&cfg)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out.csv)?;
            let resolved = path.with_extension("resolved.json");
            std::fs::write(&resolved, &out.resolved_config)?;
            eprint!("{}", outage_power_cli::summarize(&out.rows));
        }
        None => print!("{}", out.csv),
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> Result<usize, CliError> {
    let cfg = load_config(&args.config)?;
    let solution = std::fs::read_to_string(&args.solution)?;
    let v = validate_solution(&cfg, &solution, args.samples, args.seed)?;
    match &args.out {
        Some(path) => std::fs::write(path, &v.report_csv)?,
        None => print!("{}", v.report_csv),
    }
    for row in &v.rows {
        eprintln!(
            "{}: {}",
            row.scenario_id,
            if row.report.all_pass() { "pass" } else { "FAIL" }
        );
    }
    Ok(v.failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let all_maxmin = [ProblemKind::MaxMinIndividual, ProblemKind::MaxMinTotal];
    let result: Result<ExitCode, CliError> = match &cli.command {
        Command::Powermin(a) => run(a, &[ProblemKind::PowerMin], Some(false)).map(|_| ExitCode::SUCCESS),
        Command::Maxmin(a) => run(a, &all_maxmin, Some(false)).map(|_| ExitCode::SUCCESS),
        Command::Msemin(a) => run(a, &[ProblemKind::MseMin], Some(false)).map(|_| ExitCode::SUCCESS),
        Command::Sweep(a) => run(
            a,
            &[
                ProblemKind::PowerMin,
                ProblemKind::MaxMinIndividual,
                ProblemKind::MaxMinTotal,
                ProblemKind::MseMin,
            ],
            Some(true),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Validate(a) => validate(a).map(|failures| {
            if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(CliError::EmptySolution) => {
            eprintln!("error: {}", CliError::EmptySolution);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
