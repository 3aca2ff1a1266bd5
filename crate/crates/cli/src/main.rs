//! `semsurv` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid input or flags, 3 identifiability
//! failure, 4 sampler error, 5 reports or draws from different datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "semsurv", version, about = "Integrated SEM + log-normal AFT survival models fitted by Gibbs sampling")]
pub struct Cli {
    /// Flat key=value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "SEMSURV_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct McmcArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct DataArgs {
    /// Combined CSV with id, time, status and x_/u1_/u2_ columns.
    #[arg(long, conflicts_with_all = ["survival", "covariates", "platform1", "platform2"])]
    pub data: Option<PathBuf>,
    /// Split layout: id, time, status.
    #[arg(long, requires_all = ["covariates", "platform1", "platform2"])]
    pub survival: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub platform1: Option<PathBuf>,
    #[arg(long)]
    pub platform2: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q1: Option<usize>,
    #[arg(long)]
    pub q2: Option<usize>,
    #[arg(long)]
    pub sigma_t2: Option<f64>,
    /// Measurement variance of every gene on both platforms.
    #[arg(long)]
    pub sigma2_u: Option<f64>,
    /// Target censoring fraction in [0, 1).
    #[arg(long)]
    pub censor: Option<f64>,
    /// integrated | nonintegrated
    #[arg(long)]
    pub generator: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the sampler and write draws plus a fit report.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// integrated | baseline
        #[arg(long, default_value = "integrated")]
        model: String,
        #[command(flatten)]
        mcmc: McmcArgs,
        /// unit (Sigma_beta = I) | simulation (Sigma_beta = 100 I)
        #[arg(long)]
        prior: Option<String>,
        /// Fixed platform measurement variance assumed by the integrated model.
        #[arg(long)]
        sigma2_u: Option<f64>,
        /// Coefficient prior variance of the baseline model.
        #[arg(long)]
        baseline_variance: Option<f64>,
        /// Ground-truth JSON from `simulate`, enabling imputation MSE.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Recompute a fit report from stored draws.
    Assess {
        #[arg(long)]
        draws: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tabulate two or more fit reports on the same dataset.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Kaplan-Meier and posterior survival curves for chosen subjects.
    Curves {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        integrated_draws: Option<PathBuf>,
        #[arg(long)]
        baseline_draws: Option<PathBuf>,
        /// Comma-separated subject ids.
        #[arg(long, value_delimiter = ',', required = true)]
        subjects: Vec<String>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Run a simulation study and write the aggregate tables.
    ReplicateStudy {
        /// table1-desk | table2-desk | reverse-desk
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
