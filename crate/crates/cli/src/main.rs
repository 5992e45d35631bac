mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = env!("RETROSIM_VERSION");

#[derive(Debug, Parser)]
#[command(name = "retrosim", version = VERSION, about = "Nonlocal two-time collapse simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides RETROSIM_OUT and the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the ensemble seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for ensemble realizations.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one boundary-value problem and write the trajectory.
    Solve(RunArgs),
    /// Run a seeded hidden-variable ensemble and report outcome statistics.
    Ensemble(RunArgs),
    /// Evaluate the action of a stored trajectory.
    Action {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory file (.csv or .json).
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run the two-time variational calculus checks.
    VerifyAppendix {
        /// Print the check names and exit.
        #[arg(long)]
        list: bool,
        /// Flip the sign of the d/dt1 term; every affected check must fail.
        #[arg(long)]
        inject_sign_error: bool,
    },
    /// Solve over a grid of mu, nu, tau and duration values.
    Sweep(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let invocation: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a, &invocation),
        Command::Ensemble(a) => commands::ensemble(&a, &invocation),
        Command::Action { config, trajectory } => commands::action(&config, &trajectory),
        Command::VerifyAppendix { list, inject_sign_error } => commands::verify(list, inject_sign_error),
        Command::Sweep(a) => commands::sweep(&a, &invocation),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
