//! Synthetic switched-ARX benchmark, error metrics and one-at-a-time sweeps.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::predict_filtered;
use crate::trainer::multistart_fit;
use crate::types::{Dataset, FeatureMap, HyperParams, WeightSequence};

/// Stream indices of the sub-seeds derived from one user seed.
const STREAM_INPUT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_RESTARTS: u64 = 3;

/// Divergence threshold of the simulated output.
const UNSTABLE: f64 = 1e9;

/// Deterministic sub-seed `k` of `seed`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.next_u64()
}

/// Ground-truth weight trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightProfile {
    /// Two experts: expert 1 alone up to `t1`, a cosine hand-over until
    /// `t2`, expert 2 alone afterwards (1-based time).
    PlateauRamp { t1: usize, t2: usize },
    Custom { weights: WeightSequence },
}

impl WeightProfile {
    pub fn weights(&self, horizon: usize) -> Result<WeightSequence> {
        match self {
            Self::PlateauRamp { t1, t2 } => {
                if t1 >= t2 {
                    return Err(Error::InvalidArgument(format!("ramp needs t1 < t2, got {t1} and {t2}")));
                }
                let rows = (1..=horizon)
                    .map(|t| {
                        let w1 = if t <= *t1 {
                            1.0
                        } else if t <= *t2 {
                            0.5 * (1.0 + (std::f64::consts::PI * (t - t1) as f64 / (t2 - t1) as f64).cos())
                        } else {
                            0.0
                        };
                        vec![w1, 1.0 - w1]
                    })
                    .collect();
                WeightSequence::from_rows(rows)
            }
            Self::Custom { weights } => {
                if weights.len() != horizon {
                    return Err(Error::LengthMismatch {
                        what: "custom weight profile",
                        expected: horizon,
                        got: weights.len(),
                    });
                }
                Ok(weights.clone())
            }
        }
    }
}

/// Settings of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub horizon: usize,
    /// One ARX parameter vector `[a1, a2, b1, b2]` per expert.
    pub theta_true: Vec<Vec<f64>>,
    pub noise_var: f64,
    pub profile: WeightProfile,
    pub prbs_amplitude: f64,
    pub prbs_hold: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            horizon: 6000,
            theta_true: vec![vec![0.50, -0.30, 0.90, -0.80], vec![0.10, 0.40, -0.60, -0.50]],
            noise_var: 4e-2,
            profile: WeightProfile::PlateauRamp { t1: 1000, t2: 5000 },
            prbs_amplitude: 2.0,
            prbs_hold: 1,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be non-negative, got {}", self.noise_var)));
        }
        if self.theta_true.is_empty() {
            return Err(Error::Empty("true parameters"));
        }
        if let Some(p) = self.theta_true.iter().find(|p| p.len() != 4) {
            return Err(Error::DimensionMismatch {
                what: "ARX parameter vector",
                expected: 4,
                got: p.len(),
            });
        }
        if self.prbs_hold == 0 {
            return Err(Error::InvalidArgument("PRBS hold must be at least 1".into()));
        }
        let w = self.profile.weights(self.horizon)?;
        if w.n_experts() != self.theta_true.len() {
            return Err(Error::DimensionMismatch {
                what: "profile experts vs parameter vectors",
                expected: self.theta_true.len(),
                got: w.n_experts(),
            });
        }
        Ok(())
    }
}

/// Random binary sequence in `{-a, +a}`, each level held for `hold` steps.
pub fn gen_prbs(horizon: usize, amplitude: f64, hold: usize, seed: u64) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("PRBS length must be positive".into()));
    }
    if hold == 0 {
        return Err(Error::InvalidArgument("PRBS hold must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(horizon);
    while out.len() < horizon {
        let level = if rng.random::<bool>() { amplitude } else { -amplitude };
        let n = hold.min(horizon - out.len());
        out.extend(std::iter::repeat_n(level, n));
    }
    Ok(out)
}

/// A generated benchmark with its excitation and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub input: Vec<f64>,
    pub noise: Vec<f64>,
    /// Realised signal-to-noise ratio; infinite without noise.
    pub snr_db: f64,
}

/// Simulates the weighted switched ARX system. Time runs from 1 to `horizon`
/// with zero initial conditions.
pub fn simulate(spec: &BenchmarkSpec) -> Result<Simulation> {
    spec.validate()?;
    let t_len = spec.horizon;
    let weights = spec.profile.weights(t_len)?;
    let u = gen_prbs(t_len, spec.prbs_amplitude, spec.prbs_hold, sub_seed(spec.seed, STREAM_INPUT))?;
    let normal = Normal::new(0.0, spec.noise_var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, STREAM_NOISE));
    let noise: Vec<f64> = (0..t_len).map(|_| normal.sample(&mut noise_rng)).collect();

    let mut y = Vec::with_capacity(t_len);
    let mut regressors = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let lag = |v: &[f64], k: usize| if t >= k { v[t - k] } else { 0.0 };
        let x = vec![lag(&y, 1), lag(&y, 2), lag(&u, 1), lag(&u, 2)];
        let clean: f64 = weights
            .row(t)
            .iter()
            .zip(&spec.theta_true)
            .map(|(w, th)| w * crate::types::dot(&x, th))
            .sum();
        let value = clean + noise[t];
        if !(value.abs() <= UNSTABLE) {
            return Err(Error::Unstable { t: t + 1, value });
        }
        y.push(value);
        regressors.push(x);
    }
    let signal: Vec<f64> = y.iter().zip(&noise).map(|(a, e)| a - e).collect();
    let nv = variance(&noise);
    let snr = if nv > 0.0 {
        snr_db(variance(&signal), nv)?
    } else {
        f64::INFINITY
    };
    let dataset = Dataset::new(regressors, y)?.with_true_weights(weights)?;
    Ok(Simulation {
        dataset,
        input: u,
        noise,
        snr_db: snr,
    })
}

/// [`simulate`] without the by-products.
pub fn simulate_mixture(spec: &BenchmarkSpec) -> Result<Dataset> {
    Ok(simulate(spec)?.dataset)
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn check_pair(y_true: &[f64], y_pred: &[f64], min_len: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs outputs",
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.len() < min_len {
        return Err(Error::InvalidArgument(format!("need at least {min_len} samples, got {}", y_true.len())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred, 1)?;
    Ok(y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y_true.len() as f64)
}

/// Goodness of fit `max(1 - SSE / SST, 0)` with SST taken about the mean of `y_true`.
pub fn gof(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred, 2)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let sst: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Err(Error::ConstantOutput);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((1.0 - sse / sst).max(0.0))
}

/// `10 log10(signal_var / noise_var)`.
pub fn snr_db(signal_var: f64, noise_var: f64) -> Result<f64> {
    if !(signal_var > 0.0) || !(noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive, got {signal_var} and {noise_var}"
        )));
    }
    Ok(10.0 * (signal_var / noise_var).log10())
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    LambdaTheta,
    Eta,
    Rho,
    NoiseVar,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::LambdaTheta => "lambda-theta",
            Self::Eta => "eta",
            Self::Rho => "rho",
            Self::NoiseVar => "noise-var",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "lambda-theta" => Ok(Self::LambdaTheta),
            "eta" => Ok(Self::Eta),
            "rho" => Ok(Self::Rho),
            "noise-var" => Ok(Self::NoiseVar),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter '{other}' (expected lambda-theta, eta, rho or noise-var)"
            ))),
        }
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub fold: usize,
    pub mae: f64,
    pub gof: f64,
    pub snr_db: f64,
    pub final_cost: f64,
    /// Reason the cell failed; metrics are NaN in that case.
    pub error: Option<String>,
}

/// Sweep settings. Each value regenerates the benchmark (for the noise
/// sweep) and each fold holds out one contiguous block for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub folds: usize,
    /// Number of evenly spaced folds actually evaluated; `None` runs all of them.
    pub max_folds: Option<usize>,
    pub spec: BenchmarkSpec,
    pub hyper: HyperParams,
    pub specs: Vec<FeatureMap>,
}

/// Contiguous validation block of fold `f` out of `folds` over `n` samples.
pub fn fold_block(n: usize, folds: usize, f: usize) -> (usize, usize) {
    (f * n / folds, (f + 1) * n / folds)
}

/// Indices of the folds a sweep evaluates: all of them, or `n` spread
/// evenly with the midpoints of `n` equal groups.
pub fn evaluated_folds(folds: usize, max_folds: Option<usize>) -> Vec<usize> {
    match max_folds {
        Some(n) if n >= 1 && n < folds => (0..n).map(|k| (2 * k + 1) * folds / (2 * n)).collect(),
        _ => (0..folds).collect(),
    }
}

pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    if cfg.folds < 2 {
        return Err(Error::InvalidArgument(format!("folds must be at least 2, got {}", cfg.folds)));
    }
    if cfg.max_folds == Some(0) {
        return Err(Error::InvalidArgument("max_folds must be at least 1".into()));
    }
    cfg.spec.validate()?;
    cfg.hyper.validate(cfg.specs.len())?;
    let chosen = evaluated_folds(cfg.folds, cfg.max_folds);
    let cells: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|v| chosen.iter().map(move |&f| (v, f)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(v, f)| {
            let value = cfg.values[v];
            match run_cell(cfg, value, f) {
                Ok((mae, gof, snr, cost)) => SweepRow {
                    param: cfg.param,
                    value,
                    fold: f,
                    mae,
                    gof,
                    snr_db: snr,
                    final_cost: cost,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {}={value} fold {f} failed: {e}", cfg.param.name());
                    SweepRow {
                        param: cfg.param,
                        value,
                        fold: f,
                        mae: f64::NAN,
                        gof: f64::NAN,
                        snr_db: f64::NAN,
                        final_cost: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

fn run_cell(cfg: &SweepConfig, value: f64, fold: usize) -> Result<(f64, f64, f64, f64)> {
    let mut spec = cfg.spec.clone();
    let mut hyper = cfg.hyper.clone();
    match cfg.param {
        SweepParam::LambdaTheta => hyper.lambda_theta = value,
        SweepParam::Eta => hyper.eta = value,
        SweepParam::Rho => hyper.rho = value,
        SweepParam::NoiseVar => spec.noise_var = value,
    }
    hyper.seed = sub_seed(spec.seed, STREAM_RESTARTS);
    let sim = simulate(&spec)?;
    let data = &sim.dataset;
    let (v0, v1) = fold_block(data.len(), cfg.folds, fold);
    let train_idx: Vec<usize> = (0..v0).chain(v1..data.len()).collect();
    let train = data.select(&train_idx)?;
    let valid = data.slice(v0, v1)?;
    let report = multistart_fit(&train, &cfg.specs, &hyper, None)?;
    let (y_hat, _) = predict_filtered(valid.regressors(), valid.outputs(), &report.model.experts, &hyper)?;
    Ok((
        mae(valid.outputs(), &y_hat)?,
        gof(valid.outputs(), &y_hat)?,
        sim.snr_db,
        report.final_cost(),
    ))
}

/// Mean MAE and GoF per value over the successful folds.
pub fn sweep_summary(rows: &[SweepRow]) -> Vec<(f64, f64, f64)> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v && r.error.is_none()).collect();
            let n = ok.len() as f64;
            let mean = |f: fn(&SweepRow) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|r| f(r)).sum::<f64>() / n };
            (v, mean(|r| r.mae), mean(|r| r.gof))
        })
        .collect()
}

/// Sweep table as CSV with header `param,value,fold,mae,gof,snr_db,final_cost`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("param,value,fold,mae,gof,snr_db,final_cost\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.param.name(),
            r.value,
            r.fold,
            r.mae,
            r.gof,
            r.snr_db,
            r.final_cost
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(gof(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(gof(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(gof(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(gof(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ConstantOutput)));
        assert_eq!(snr_db(1.0, 1.0).unwrap(), 0.0);
        assert!((snr_db(4.0, 0.04).unwrap() - 20.0).abs() < 1e-12);
        assert!(snr_db(0.0, 1.0).is_err());
    }

    #[test]
    fn prbs_examples() {
        let u = gen_prbs(100, 1.0, 1, 3).unwrap();
        assert!(u.iter().all(|v| v.abs() == 1.0));
        let c = gen_prbs(50, 2.0, 50, 3).unwrap();
        assert!(c.iter().all(|v| *v == c[0]));
        assert_eq!(u, gen_prbs(100, 1.0, 1, 3).unwrap());
    }

    #[test]
    fn profile_shape() {
        let w = WeightProfile::PlateauRamp { t1: 1000, t2: 5000 }.weights(6000).unwrap();
        assert_eq!(w.row(999), &[1.0, 0.0]);
        assert!((w.row(2999)[0] - 0.5).abs() < 1e-12);
        assert_eq!(w.row(5000)[0], 0.0);
    }

    #[test]
    fn fold_blocks_tile_the_horizon() {
        let blocks: Vec<_> = (0..10).map(|f| fold_block(6000, 10, f)).collect();
        assert_eq!(blocks[0], (0, 600));
        assert_eq!(blocks[9].1, 6000);
        assert!(blocks.windows(2).all(|b| b[0].1 == b[1].0));
    }

    #[test]
    fn evaluated_fold_choice() {
        assert_eq!(evaluated_folds(10, None), (0..10).collect::<Vec<_>>());
        assert_eq!(evaluated_folds(10, Some(2)), vec![2, 7]);
        assert_eq!(evaluated_folds(10, Some(3)), vec![1, 5, 8]);
        assert_eq!(evaluated_folds(4, Some(9)), vec![0, 1, 2, 3]);
    }

    #[test]
    fn sweep_param_names() {
        for p in [SweepParam::LambdaTheta, SweepParam::Eta, SweepParam::Rho, SweepParam::NoiseVar] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("gamma".parse::<SweepParam>().is_err());
    }
}
