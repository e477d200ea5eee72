//! Alternating fit of experts and weights, with random restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert_fit::{fit_admm_from, fit_separable};
use crate::objective::{total_cost, LossBreakdown};
use crate::types::{Dataset, Expert, FeatureMap, HyperParams, MixtureModel, WeightSequence};
use crate::weight_fit::fit_weights_windowed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    ThetaOmegaTol,
    CostTol,
    KMax,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ThetaOmegaTol => "theta_omega_tol",
            Self::CostTol => "cost_tol",
            Self::KMax => "k_max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop(TerminationReason),
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: MixtureModel,
    pub iterations: usize,
    pub termination_reason: TerminationReason,
    pub restart_index: usize,
    /// Final cost of every restart; failed restarts are `inf`.
    pub all_restart_costs: Vec<f64>,
}

impl FitReport {
    pub fn final_cost(&self) -> f64 {
        self.model.final_cost().unwrap_or(f64::INFINITY)
    }

    /// Cost trace as CSV with header `k,J,mix,local,reg,shaper`.
    pub fn cost_trace_csv(&self) -> String {
        cost_trace_csv(&self.model.cost_trace)
    }
}

pub fn cost_trace_csv(trace: &[LossBreakdown]) -> String {
    let mut s = String::from("k,J,mix,local,reg,shaper\n");
    for (k, b) in trace.iter().enumerate() {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            k + 1,
            b.total,
            b.mix_term,
            b.local_term,
            b.regularizer_term,
            b.shaper_term
        ));
    }
    s
}

/// Stopping rule. Tolerance rules take precedence over the iteration cap,
/// and the joint parameter/weight rule over the cost rule.
pub fn check_termination(theta_delta: f64, omega_delta: f64, cost_delta: f64, hyper: &HyperParams, k: usize) -> Decision {
    if theta_delta < hyper.eps_theta && omega_delta < hyper.eps_omega {
        Decision::Stop(TerminationReason::ThetaOmegaTol)
    } else if cost_delta < hyper.eps_j {
        Decision::Stop(TerminationReason::CostTol)
    } else if k >= hyper.k_max {
        Decision::Stop(TerminationReason::KMax)
    } else {
        Decision::Continue
    }
}

fn theta_distance(a: &[Expert], b: &[Expert]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.params.iter().zip(&y.params).map(|(p, q)| (p - q) * (p - q)))
        .sum::<f64>()
        .sqrt()
}

/// Expert step: ADMM in general, the exact separable fit when `c = 0`.
pub fn expert_step(
    dataset: &Dataset,
    specs: &[FeatureMap],
    weights: &WeightSequence,
    hyper: &HyperParams,
    previous: Option<&[Expert]>,
) -> Result<Vec<Expert>> {
    let fresh = if hyper.c == 0.0 {
        fit_separable(dataset, specs, weights, hyper)?
    } else {
        fit_admm_from(dataset, specs, weights, hyper, previous)?.0
    };
    // ADMM stopped at its iteration cap is not guaranteed to improve on its
    // warm start; keep the previous experts in that case.
    if let Some(prev) = previous {
        let old = total_cost(dataset, prev, weights, hyper)?.total;
        let new = total_cost(dataset, &fresh, weights, hyper)?.total;
        if !(new <= old) {
            return Ok(prev.to_vec());
        }
    }
    Ok(fresh)
}

/// Alternates the expert step and the windowed weight step from `omega_init`.
pub fn coordinate_descent(dataset: &Dataset, specs: &[FeatureMap], omega_init: &WeightSequence, hyper: &HyperParams) -> Result<FitReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let m = specs.len();
    hyper.validate(m)?;
    if omega_init.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "initial weights vs dataset",
            expected: dataset.len(),
            got: omega_init.len(),
        });
    }
    if omega_init.n_experts() != m {
        return Err(Error::DimensionMismatch {
            what: "initial weights vs experts",
            expected: m,
            got: omega_init.n_experts(),
        });
    }
    if let Some(v) = omega_init.validate().first() {
        return Err(Error::InfeasibleWeights(v.to_string()));
    }

    let mut weights = omega_init.clone();
    let mut experts: Option<Vec<Expert>> = None;
    let mut trace: Vec<LossBreakdown> = Vec::new();
    let mut k = 0;
    let reason = loop {
        k += 1;
        let new_experts = expert_step(dataset, specs, &weights, hyper, experts.as_deref())?;
        let new_weights = fit_weights_windowed(dataset, &new_experts, &weights, hyper)?;
        let cost = total_cost(dataset, &new_experts, &new_weights, hyper)?;
        let (dt, dw, dj) = match (&experts, trace.last()) {
            (Some(e), Some(prev)) => (
                theta_distance(e, &new_experts),
                weights.distance(&new_weights),
                (prev.total - cost.total).abs(),
            ),
            _ => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        };
        log::debug!("iteration {k}: J = {:e}", cost.total);
        trace.push(cost);
        experts = Some(new_experts);
        weights = new_weights;
        if let Decision::Stop(r) = check_termination(dt, dw, dj, hyper, k) {
            break r;
        }
    };
    let final_cost = trace.last().map(|c| c.total).unwrap_or(f64::INFINITY);
    Ok(FitReport {
        model: MixtureModel {
            experts: experts.unwrap_or_default(),
            train_weights: weights,
            gating: None,
            hyper: hyper.clone(),
            cost_trace: trace,
        },
        iterations: k,
        termination_reason: reason,
        restart_index: 0,
        all_restart_costs: vec![final_cost],
    })
}

/// Row-wise uniform samples on the simplex (Dirichlet with unit concentration).
pub fn random_weights(t: usize, m: usize, rng: &mut impl Rng) -> WeightSequence {
    let mut data = Vec::with_capacity(t * m);
    for _ in 0..t {
        let row: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    WeightSequence::from_flat(m, data).expect("normalised exponential draws lie on the simplex")
}

/// Initial weights of restart `r`.
pub fn restart_weights(t: usize, m: usize, seed: u64, r: usize) -> WeightSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    random_weights(t, m, &mut rng)
}

/// Runs `n_restarts` alternating fits and keeps the cheapest.
///
/// Restart 0 starts from `prior` when one is supplied; all others start from
/// random weights drawn with `hyper.seed`. Ties are broken by restart index.
pub fn multistart_fit(dataset: &Dataset, specs: &[FeatureMap], hyper: &HyperParams, prior: Option<&WeightSequence>) -> Result<FitReport> {
    hyper.validate(specs.len())?;
    let m = specs.len();
    let runs: Vec<Result<FitReport>> = (0..hyper.n_restarts)
        .into_par_iter()
        .map(|r| {
            let init = match (r, prior) {
                (0, Some(p)) => p.clone(),
                _ => restart_weights(dataset.len(), m, hyper.seed, r),
            };
            coordinate_descent(dataset, specs, &init, hyper)
        })
        .collect();
    let costs: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map(|f| f.final_cost()).unwrap_or(f64::INFINITY))
        .collect();
    let best = costs
        .iter()
        .enumerate()
        .filter(|(i, _)| runs[*i].is_ok())
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(runs
            .into_iter()
            .find_map(|r| r.err())
            .expect("every restart failed"));
    };
    for (i, r) in runs.iter().enumerate() {
        if let Err(e) = r {
            log::warn!("restart {i} failed: {e}");
        }
    }
    let mut report = runs.into_iter().nth(best).expect("index in range")?;
    report.restart_index = best;
    report.all_restart_costs = costs;
    Ok(report)
}
