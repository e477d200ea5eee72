//! `blendfit` command-line tool: data generation, fitting, prediction,
//! evaluation and sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Common, HyperArgs, SpecArgs};

#[derive(Debug, Parser)]
#[command(name = "blendfit", version, about = "Fit smooth mixtures of linear-in-parameter experts")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the synthetic two-expert ARX benchmark.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Fit experts and weights to a dataset.
    Fit {
        /// Dataset CSV with columns t,y,x1..xn.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Expert feature maps, e.g. `linear,poly2`.
        #[arg(long, value_delimiter = ',')]
        experts: Option<Vec<String>>,
        /// Cost-trace CSV; defaults to `<out>.trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Estimate outputs and weights for new regressors.
    Predict {
        /// Model JSON written by `fit`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Regressor CSV; the `y` column is required by the filtered mode.
        #[arg(long)]
        data: Option<PathBuf>,
        /// recursive, filtered or gating.
        #[arg(long)]
        mode: Option<String>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Predictions CSV written by `predict`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Ground-truth dataset CSV.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Vary one setting on the benchmark with blocked cross-validation.
    Sweep {
        /// lambda-theta, eta, rho or noise-var.
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
        #[arg(long)]
        folds: Option<usize>,
        /// Evaluate only this many evenly spaced folds.
        #[arg(long)]
        max_folds: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        experts: Option<Vec<String>>,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<blendfit::Error>().is_some_and(|b| b.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
