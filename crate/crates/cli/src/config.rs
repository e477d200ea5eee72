//! Run configuration: TOML file keys overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blendfit::benchmark::{BenchmarkSpec, WeightProfile};
use blendfit::{FeatureMap, HyperParams};
use clap::Args;
use serde::Deserialize;

/// Contents of a `--config` file. Every key is optional; unknown keys are
/// rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub mode: Option<String>,
    pub experts: Option<Vec<String>>,
    pub param: Option<String>,
    pub values: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub max_folds: Option<usize>,
    pub hyper: Option<toml::Table>,
    pub benchmark: Option<toml::Table>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Benchmark settings from the `[benchmark]` table over the defaults.
    pub fn benchmark(&self) -> Result<BenchmarkSpec> {
        match &self.benchmark {
            None => Ok(BenchmarkSpec::default()),
            Some(t) => t.clone().try_into().context("invalid [benchmark] table"),
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with default settings for this run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for restarts and sweep cells.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Overrides of individual hyper-parameters.
#[derive(Debug, Default, Args)]
pub struct HyperArgs {
    /// Weight of the per-expert local loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Ridge penalty on the expert parameters.
    #[arg(long)]
    pub lambda_theta: Option<f64>,
    /// Weight-smoothness penalty.
    #[arg(long)]
    pub eta: Option<f64>,
    /// ADMM penalty.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Mixture-loss coefficient.
    #[arg(long)]
    pub c: Option<f64>,
    /// Local-loss coefficients, one per expert.
    #[arg(long, value_delimiter = ',')]
    pub c_local: Option<Vec<f64>>,
    /// Length of the weight sub-problems.
    #[arg(long)]
    pub window: Option<usize>,
    /// Tolerance on the parameter change between iterations.
    #[arg(long)]
    pub eps_theta: Option<f64>,
    /// Tolerance on the weight change between iterations.
    #[arg(long)]
    pub eps_omega: Option<f64>,
    /// Tolerance on the cost change between iterations.
    #[arg(long)]
    pub eps_j: Option<f64>,
    /// Outer iteration cap.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_max: Option<u64>,
    /// ADMM iteration cap.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub j_max: Option<u64>,
    /// ADMM residual tolerance.
    #[arg(long)]
    pub admm_tol: Option<f64>,
    /// Number of random restarts.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: Option<u64>,
    /// Past steps re-estimated by the filtered predictor.
    #[arg(long)]
    pub filter_horizon: Option<usize>,
    /// Neighbours used by the gating predictor.
    #[arg(long)]
    pub gating_k: Option<usize>,
}

impl HyperArgs {
    pub fn apply(&self, h: &mut HyperParams) {
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { h.$target = v as _; })*
            };
        }
        set!(beta => beta, lambda_theta => lambda_theta, eta => eta, rho => rho, c => c, window => window,
            eps_theta => eps_theta, eps_omega => eps_omega, eps_j => eps_j, k_max => k_max, j_max => j_max,
            admm_tol => admm_tol, restarts => n_restarts, filter_horizon => filter_horizon, gating_k => gating_k);
        if let Some(v) = &self.c_local {
            h.c_local = v.clone();
        }
    }
}

/// Overrides of the synthetic benchmark.
#[derive(Debug, Default, Args)]
pub struct SpecArgs {
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub prbs_amplitude: Option<f64>,
    #[arg(long)]
    pub prbs_hold: Option<usize>,
    /// Last step of the expert-1 plateau.
    #[arg(long, requires = "t2")]
    pub t1: Option<usize>,
    /// Last step of the hand-over ramp.
    #[arg(long, requires = "t1")]
    pub t2: Option<usize>,
}

impl SpecArgs {
    pub fn apply(&self, s: &mut BenchmarkSpec) {
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.noise_var {
            s.noise_var = v;
        }
        if let Some(v) = self.prbs_amplitude {
            s.prbs_amplitude = v;
        }
        if let Some(v) = self.prbs_hold {
            s.prbs_hold = v;
        }
        if let (Some(t1), Some(t2)) = (self.t1, self.t2) {
            s.profile = WeightProfile::PlateauRamp { t1, t2 };
        }
    }
}

pub fn parse_experts(names: &[String]) -> Result<Vec<FeatureMap>> {
    if names.is_empty() {
        bail!("at least one expert is required");
    }
    names.iter().map(|n| Ok(n.parse::<FeatureMap>()?)).collect()
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

pub fn require_writable(path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    Ok(())
}
