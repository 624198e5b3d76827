use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use litdark::commands;
use litdark::suites::Suite;
use litdark::{with_threads, CliError, Scenario, THREADS_ENV};

/// Optimal execution across a lit exchange and a dark pool.
///
/// Exit codes: 0 success, 1 I/O error, 2 schema or usage error,
/// 3 numerical abort, 4 validation failure.
#[derive(Parser, Debug)]
#[command(name = "litdark", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,

    /// Output directory (defaults to `outputs.dir` of the scenario).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides `sim.n_paths`.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate book paths with no trading and write them as CSV.
    Simulate(Common),
    /// Solve the control problem and write value and policy containers.
    Solve(Common),
    /// Compare the grid value with a Monte Carlo run of the solved policy.
    Evaluate(Common),
    /// Run a named property suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Suite name.
        #[arg(long)]
        suite: String,
    },
    /// Write the plot data of a figure from the bundled scenarios.
    Reproduce {
        /// Figure id such as `fig5` or `fig5_left`.
        figure: String,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<(Scenario, PathBuf), CliError> {
    if c.paths == Some(0) {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    let scenario = Scenario::from_path(&c.scenario)?.with_sim_overrides(c.paths, c.seed)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&scenario.file.outputs.dir));
    Ok((scenario, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Simulate(c) => {
            let (s, out) = load(&c)?;
            with_threads(threads, || commands::simulate(&s, &out))??;
            println!("wrote paths to {}", out.display());
        }
        Command::Solve(c) => {
            let (s, out) = load(&c)?;
            let (_, sol) = with_threads(threads, || commands::solve(&s, &out))??;
            let d = &sol.diagnostics;
            println!(
                "solved {}: {} substeps, dt = {:.4e} (max {:.4e}), residual = {:.4e}",
                s.name(),
                d.substeps,
                d.dt,
                d.max_dt,
                d.residual
            );
        }
        Command::Evaluate(c) => {
            let (s, out) = load(&c)?;
            let (_, e) = with_threads(threads, || commands::evaluate(&s, &out))??;
            println!(
                "grid value {:.6}, Monte Carlo {:.6} +/- {:.6} ({} paths)",
                e.grid_value, e.mc_mean, e.mc_std_error, e.paths
            );
        }
        Command::Validate { common, suite } => {
            let suite = Suite::parse(&suite)?;
            let (s, out) = load(&common)?;
            let (_, report) = with_threads(threads, || commands::validate(&s, suite, &out))??;
            for note in &report.notes {
                println!("{note}");
            }
            println!("{} {}: {}", suite, s.name(), if report.passed { "PASS" } else { "FAIL" });
            if !report.passed {
                return Err(CliError::Validation(format!("suite {suite} failed on {}", s.name())));
            }
        }
        Command::Reproduce { figure, out } => {
            let dirs = with_threads(threads, || commands::reproduce(&figure, &out))??;
            for d in dirs {
                println!("wrote {}", d.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("litdark: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
