//! Expert update (the `Theta` step of the alternation).
//!
//! Two routes are provided. [`fit_separable`] handles the case where the
//! mixture coefficient `c` is zero and the experts decouple into independent
//! weighted ridge regressions. [`fit_admm`] handles the general sharing
//! problem
//!
//! ```text
//! min_Theta  sum_i h_i(theta_i) + sum_t g( Omega(t) . f(x(t); Theta) )
//! h_i = beta sum_t omega_i(t) c_i (y(t) - f_i)^2 + lambda_theta |theta_i|^2
//! g(v) = c (y(t) - v)^2
//! ```
//!
//! with the averaged form of scaled ADMM: one auxiliary scalar `zbar(t)` and
//! one scaled multiplier `ubar(t)` per sample instead of one per expert and
//! sample. Per iteration:
//!
//! 1. every `theta_i` minimises `h_i + rho/2 sum_t delta_i(t)^2` with
//!    `delta_i(t) = omega_i(t) (f_i(theta_i) - f_i(theta_i^j)) + Omega(t).f^j / M - zbar(t) + ubar(t)`;
//! 2. `zbar(t) = (2 c y(t) + rho abar(t)) / (2 c M + rho)` where
//!    `abar(t) = Omega(t).f^{j+1} / M + ubar(t)`;
//! 3. `ubar(t) += Omega(t).f^{j+1} / M - zbar(t)`.
//!
//! Because every expert is linear in its parameters, step 1 is a weighted
//! ridge regression whose normal matrix does not change across iterations;
//! it is factored once per call.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{weighted_gram, NormalFactor};
use crate::types::{dot, expert_predictions, Dataset, Expert, FeatureMap, HyperParams, WeightSequence};

/// Averaged ADMM variables and the residuals of the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub zbar: Vec<f64>,
    pub ubar: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iteration: usize,
    /// `(j, primal, dual)` for every completed iteration.
    pub trace: Vec<(usize, f64, f64)>,
}

impl AdmmState {
    /// Consensus-feasible start: `zbar(t) = Omega(t).f(x(t); Theta) / M`, `ubar = 0`.
    pub fn consensus_start(dataset: &Dataset, experts: &[Expert], weights: &WeightSequence) -> Result<Self> {
        let preds = expert_predictions(dataset, experts)?;
        let m = experts.len();
        let zbar = mixture_over_m(&preds, weights, m);
        Ok(Self {
            ubar: vec![0.0; zbar.len()],
            zbar,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    /// Residual trace as CSV with header `j,primal,dual`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("j,primal,dual\n");
        for (j, p, d) in &self.trace {
            s.push_str(&format!("{j},{p:e},{d:e}\n"));
        }
        s
    }
}

fn mixture_over_m(preds: &[f64], weights: &WeightSequence, m: usize) -> Vec<f64> {
    preds
        .chunks(m)
        .zip(weights.rows())
        .map(|(f, w)| dot(w, f) / m as f64)
        .collect()
}

fn check_shapes(dataset: &Dataset, specs: &[FeatureMap], weights: &WeightSequence) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Empty("expert specifications"));
    }
    if weights.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "weights vs dataset",
            expected: dataset.len(),
            got: weights.len(),
        });
    }
    if weights.n_experts() != specs.len() {
        return Err(Error::DimensionMismatch {
            what: "weight rows vs experts",
            expected: specs.len(),
            got: weights.n_experts(),
        });
    }
    Ok(())
}

/// Row-major `T x p` design matrix of one expert.
fn design(dataset: &Dataset, map: FeatureMap) -> (Vec<f64>, usize) {
    let p = map.dim(dataset.n_x());
    let mut out = Vec::with_capacity(dataset.len() * p);
    for x in dataset.regressors() {
        out.extend(map.features(x));
    }
    (out, p)
}

/// Minimises `sum_t s_t (y_t - phi_t . theta)^2 + lambda |theta|^2`.
pub(crate) fn weighted_ridge(
    dataset: &Dataset,
    map: FeatureMap,
    sample_weights: &[f64],
    lambda: f64,
    expert: usize,
) -> Result<Expert> {
    let (phi, p) = design(dataset, map);
    let mut a = weighted_gram(&phi, p, sample_weights.iter().copied());
    for k in 0..p {
        a[(k, k)] += lambda;
    }
    let mut rhs = vec![0.0; p];
    for ((row, &s), &y) in phi.chunks(p).zip(sample_weights).zip(dataset.outputs()) {
        for k in 0..p {
            rhs[k] += s * y * row[k];
        }
    }
    let f = NormalFactor::new(a).ok_or(Error::RankDeficient { expert })?;
    Ok(Expert::new(map, f.solve(&rhs)))
}

/// Independent per-expert fits for a mixture-free objective.
///
/// Expert `i` minimises
/// `beta sum_t omega_i(t) c_i (y(t) - phi_i(x(t)) . theta_i)^2 + lambda_theta |theta_i|^2`,
/// which is the `Theta` block of the total cost when `c = 0`.
pub fn fit_separable(dataset: &Dataset, specs: &[FeatureMap], weights: &WeightSequence, hyper: &HyperParams) -> Result<Vec<Expert>> {
    fit_separable_scaled(dataset, specs, weights, hyper, hyper.beta)
}

fn fit_separable_scaled(
    dataset: &Dataset,
    specs: &[FeatureMap],
    weights: &WeightSequence,
    hyper: &HyperParams,
    scale: f64,
) -> Result<Vec<Expert>> {
    check_shapes(dataset, specs, weights)?;
    let m = specs.len();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, &map)| {
            let s: Vec<f64> = weights
                .as_flat()
                .iter()
                .skip(i)
                .step_by(m)
                .map(|w| scale * w * hyper.c_i(i))
                .collect();
            weighted_ridge(dataset, map, &s, hyper.lambda_theta, i)
        })
        .collect()
}

/// Cached normal equations of one expert's ADMM subproblem.
struct ThetaSolver {
    map: FeatureMap,
    phi: Vec<f64>,
    p: usize,
    omega: Vec<f64>,
    factor: NormalFactor,
    /// `beta sum_t omega c_i y phi`, constant over iterations.
    data_rhs: Vec<f64>,
}

impl ThetaSolver {
    fn new(dataset: &Dataset, i: usize, map: FeatureMap, weights: &WeightSequence, hyper: &HyperParams) -> Result<Self> {
        let m = weights.n_experts();
        let (phi, p) = design(dataset, map);
        let omega: Vec<f64> = weights.as_flat().iter().skip(i).step_by(m).copied().collect();
        let ci = hyper.c_i(i);
        let lw = |w: f64| hyper.beta * w * ci + 0.5 * hyper.rho * w * w;
        let mut a = weighted_gram(&phi, p, omega.iter().map(|&w| lw(w)));
        for k in 0..p {
            a[(k, k)] += hyper.lambda_theta;
        }
        let factor = NormalFactor::new(a).ok_or(Error::RankDeficient { expert: i })?;
        let mut data_rhs = vec![0.0; p];
        for ((row, &w), &y) in phi.chunks(p).zip(&omega).zip(dataset.outputs()) {
            let s = hyper.beta * w * ci * y;
            for k in 0..p {
                data_rhs[k] += s * row[k];
            }
        }
        Ok(Self {
            map,
            phi,
            p,
            omega,
            factor,
            data_rhs,
        })
    }

    /// `offset[t] = Omega(t).f^j / M - zbar(t) + ubar(t)`.
    fn solve(&self, theta_prev: &[f64], offset: &[f64], rho: f64) -> Expert {
        let mut rhs = self.data_rhs.clone();
        for ((row, &w), &r) in self.phi.chunks(self.p).zip(&self.omega).zip(offset) {
            if w == 0.0 {
                continue;
            }
            let target = w * dot(row, theta_prev) - r;
            let s = 0.5 * rho * w * target;
            for k in 0..self.p {
                rhs[k] += s * row[k];
            }
        }
        Expert::new(self.map, self.factor.solve(&rhs))
    }

    fn predictions(&self, theta: &[f64]) -> Vec<f64> {
        self.phi.chunks(self.p).map(|row| dot(row, theta)).collect()
    }
}

fn offsets(mix_over_m: &[f64], state: &AdmmState) -> Vec<f64> {
    mix_over_m
        .iter()
        .zip(&state.zbar)
        .zip(&state.ubar)
        .map(|((a, z), u)| a - z + u)
        .collect()
}

/// One expert's ADMM parameter update.
pub fn admm_theta_step(
    dataset: &Dataset,
    expert: usize,
    weights: &WeightSequence,
    state: &AdmmState,
    theta_prev: &[Expert],
    hyper: &HyperParams,
) -> Result<Expert> {
    check_shapes(
        dataset,
        &theta_prev.iter().map(|e| e.map).collect::<Vec<_>>(),
        weights,
    )?;
    check_state(dataset, state)?;
    let m = theta_prev.len();
    let preds = expert_predictions(dataset, theta_prev)?;
    let mix = mixture_over_m(&preds, weights, m);
    let solver = ThetaSolver::new(dataset, expert, theta_prev[expert].map, weights, hyper)?;
    Ok(solver.solve(&theta_prev[expert].params, &offsets(&mix, state), hyper.rho))
}

fn check_state(dataset: &Dataset, state: &AdmmState) -> Result<()> {
    for (what, v) in [("zbar", &state.zbar), ("ubar", &state.ubar)] {
        if v.len() != dataset.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: dataset.len(),
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn zbar_update(y: &[f64], mix_over_m: &[f64], ubar: &[f64], m: usize, hyper: &HyperParams) -> Vec<f64> {
    let denom = 2.0 * hyper.c * m as f64 + hyper.rho;
    y.iter()
        .zip(mix_over_m)
        .zip(ubar)
        .map(|((&y, &a), &u)| (2.0 * hyper.c * y + hyper.rho * (a + u)) / denom)
        .collect()
}

/// Auxiliary-variable update for freshly updated experts.
pub fn admm_zbar_step(
    dataset: &Dataset,
    experts: &[Expert],
    weights: &WeightSequence,
    state: &AdmmState,
    hyper: &HyperParams,
) -> Result<Vec<f64>> {
    check_state(dataset, state)?;
    let preds = expert_predictions(dataset, experts)?;
    let mix = mixture_over_m(&preds, weights, experts.len());
    Ok(zbar_update(dataset.outputs(), &mix, &state.ubar, experts.len(), hyper))
}

/// Scaled dual update. Returns the new `ubar` and the primal residual
/// `max_t |Omega(t).f / M - zbar(t)|`; `state.zbar` must already hold the
/// updated auxiliary variables.
pub fn admm_dual_step(
    dataset: &Dataset,
    experts: &[Expert],
    weights: &WeightSequence,
    state: &AdmmState,
) -> Result<(Vec<f64>, f64)> {
    check_state(dataset, state)?;
    let preds = expert_predictions(dataset, experts)?;
    let mix = mixture_over_m(&preds, weights, experts.len());
    Ok(dual_update(&mix, &state.zbar, &state.ubar))
}

fn dual_update(mix_over_m: &[f64], zbar: &[f64], ubar: &[f64]) -> (Vec<f64>, f64) {
    let mut primal = 0.0f64;
    let u = mix_over_m
        .iter()
        .zip(zbar)
        .zip(ubar)
        .map(|((a, z), u)| {
            let r = a - z;
            primal = primal.max(r.abs());
            u + r
        })
        .collect();
    (u, primal)
}

/// Averaged ADMM for the sharing problem, started from the separable fit.
pub fn fit_admm(
    dataset: &Dataset,
    specs: &[FeatureMap],
    weights: &WeightSequence,
    hyper: &HyperParams,
) -> Result<(Vec<Expert>, AdmmState)> {
    fit_admm_from(dataset, specs, weights, hyper, None)
}

/// Averaged ADMM with an optional warm start for the experts.
///
/// Without a warm start the experts are initialised by the weighted local
/// fit `sum_t omega_i c_i (y - f_i)^2 + lambda_theta |theta_i|^2`.
pub fn fit_admm_from(
    dataset: &Dataset,
    specs: &[FeatureMap],
    weights: &WeightSequence,
    hyper: &HyperParams,
    init: Option<&[Expert]>,
) -> Result<(Vec<Expert>, AdmmState)> {
    check_shapes(dataset, specs, weights)?;
    let m = specs.len();
    let mut experts = match init {
        Some(e) => {
            if e.len() != m || e.iter().zip(specs).any(|(e, s)| e.map != *s) {
                return Err(Error::InvalidArgument("warm start does not match the expert specifications".into()));
            }
            e.to_vec()
        }
        None => fit_separable_scaled(dataset, specs, weights, hyper, 1.0)?,
    };
    let solvers = specs
        .par_iter()
        .enumerate()
        .map(|(i, &map)| ThetaSolver::new(dataset, i, map, weights, hyper))
        .collect::<Result<Vec<_>>>()?;

    let mut preds: Vec<Vec<f64>> = solvers
        .iter()
        .zip(&experts)
        .map(|(s, e)| s.predictions(&e.params))
        .collect();
    let mix_of = |preds: &[Vec<f64>]| -> Vec<f64> {
        (0..dataset.len())
            .map(|t| {
                let row = weights.row(t);
                (0..m).map(|i| row[i] * preds[i][t]).sum::<f64>() / m as f64
            })
            .collect()
    };
    let mut mix = mix_of(&preds);
    let mut state = AdmmState {
        zbar: mix.clone(),
        ubar: vec![0.0; dataset.len()],
        primal_residual: 0.0,
        dual_residual: 0.0,
        iteration: 0,
        trace: Vec::new(),
    };

    for j in 1..=hyper.j_max {
        let off = offsets(&mix, &state);
        experts = solvers
            .par_iter()
            .zip(&experts)
            .map(|(s, e)| s.solve(&e.params, &off, hyper.rho))
            .collect();
        preds = solvers
            .iter()
            .zip(&experts)
            .map(|(s, e)| s.predictions(&e.params))
            .collect();
        mix = mix_of(&preds);
        let zbar = zbar_update(dataset.outputs(), &mix, &state.ubar, m, hyper);
        let (ubar, primal) = dual_update(&mix, &zbar, &state.ubar);
        let dual = hyper.rho
            * zbar
                .iter()
                .zip(&state.zbar)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        state.zbar = zbar;
        state.ubar = ubar;
        state.primal_residual = primal;
        state.dual_residual = dual;
        state.iteration = j;
        state.trace.push((j, primal, dual));
        if primal <= hyper.admm_tol && dual <= hyper.admm_tol {
            break;
        }
    }
    Ok((experts, state))
}

/// Objective of one expert's ADMM subproblem, used to verify the update.
pub fn theta_subproblem_objective(
    dataset: &Dataset,
    expert: usize,
    candidate: &Expert,
    weights: &WeightSequence,
    state: &AdmmState,
    theta_prev: &[Expert],
    hyper: &HyperParams,
) -> Result<f64> {
    let m = theta_prev.len();
    let preds = expert_predictions(dataset, theta_prev)?;
    let mix = mixture_over_m(&preds, weights, m);
    let off = offsets(&mix, state);
    let ci = hyper.c_i(expert);
    let mut acc = hyper.lambda_theta * candidate.params.iter().map(|p| p * p).sum::<f64>();
    for (t, x) in dataset.regressors().iter().enumerate() {
        let w = weights.row(t)[expert];
        let f = candidate.predict(x)?;
        let r = dataset.outputs()[t] - f;
        let delta = w * (f - preds[t * m + expert]) + off[t];
        acc += hyper.beta * w * ci * r * r + 0.5 * hyper.rho * delta * delta;
    }
    Ok(acc)
}
