use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::{CliError, Context};

/// Optimal consumption and investment with loss aversion and habit formation.
#[derive(Parser, Debug)]
#[command(name = "habitfbp", version)]
struct Cli {
    /// JSON configuration; the base case is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for sweeps, limit cases and Monte Carlo paths.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve once and write the dual and policy tables.
    Solve,
    /// Solve for several values of one parameter and overlay the policies.
    Sweep {
        /// One of p, q, kappa, alpha, mu, rho, delta.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Check the solution against its equations and a finite-difference solver.
    Validate,
    /// Simulate the optimally controlled state.
    Simulate,
    /// Run a limiting-case comparison.
    Limits {
        #[arg(value_enum)]
        case: Case,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Case {
    Merton,
    FixedReference,
    Rogers,
    Aby22,
    All,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let ctx = Context::load(cli.config.as_deref(), &cli.out, cli.seed)?;
    match cli.command {
        Command::Solve => ctx.solve(),
        Command::Sweep { param, values } => ctx.sweep(&param, &values),
        Command::Validate => ctx.validate(),
        Command::Simulate => ctx.simulate(),
        Command::Limits { case } => ctx.limits(case),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HABITFBP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
