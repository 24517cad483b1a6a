//! Batch workflows around the RapPCA library: simulation, fitting,
//! prediction, evaluation, tuning, rank selection and optimality checks.

pub mod artifacts;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rappca_core::Execution;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rappca", version, about = "Representative and predictive PCA for spatial data")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate replicates of a simulation scenario.
    Simulate {
        #[arg(long)]
        scenario: u32,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        noise_var: Option<f64>,
        /// Generate replicates one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Fit a model and write its bundle.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict scores and outcomes at new locations from a bundle.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        locations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Identifier column of the locations file.
        #[arg(long)]
        id: Option<String>,
    },
    /// K-fold train/test metrics.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated hyperparameter search.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cumulative prediction error and representation error by rank.
    RankCurves {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rmax: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Polar perturbation curves around each fitted component.
    VerifyOptimality {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 360)]
        theta_grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { scenario, replicates, seed, out, n, d, p, noise_var, sequential } => {
            let args = commands::SimulateArgs {
                scenario: *scenario,
                replicates: *replicates,
                seed: *seed,
                n: *n,
                d: *d,
                p: *p,
                noise_var: *noise_var,
                exec: if *sequential { Execution::Sequential } else { Execution::Parallel },
            };
            commands::simulate(&args, out)
        }
        Command::Fit { config, out } => commands::fit(config, out.as_deref()),
        Command::Predict { model, locations, out, id } => commands::predict(model, locations, out, id.as_deref()),
        Command::Evaluate { config, out } => commands::evaluate(config, out.as_deref()),
        Command::Tune { config, out } => commands::tune(config, out.as_deref()),
        Command::RankCurves { config, rmax, out } => commands::rank_curves_cmd(config, *rmax, out.as_deref()),
        Command::VerifyOptimality { config, theta_grid, out } => {
            commands::verify_optimality(config, *theta_grid, out.as_deref())
        }
    }
}
