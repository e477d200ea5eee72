//! Loss terms of the fitting objective
//!
//! ```text
//! J = sum_t [ c (y - Omega(t).f)^2 + beta sum_i omega_i c_i (y - f_i)^2 ]
//!     + lambda_theta sum_i |theta_i|^2
//!     + eta sum_{t>=2} |Omega(t) - Omega(t-1)|^2
//! ```
//!
//! Every term is a squared error or squared norm. Read probabilistically,
//! the quadratic regulariser is a Gaussian prior on each parameter vector
//! with standard deviation `sqrt(1 / (2 lambda_theta))`, and the mixture
//! loss a Gaussian likelihood with `sigma_y = sqrt(1 / (2 c))`. Neither
//! reading is used by the code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, expert_predictions, Dataset, Expert, HyperParams, WeightSequence};

/// Components of the total cost. `local_term` is reported before scaling
/// by `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mix_term: f64,
    pub local_term: f64,
    pub regularizer_term: f64,
    pub shaper_term: f64,
    pub total: f64,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `c (y - omega . preds)^2`.
pub fn mix_loss(y: f64, omega: &[f64], preds: &[f64], c: f64) -> Result<f64> {
    check_len("expert predictions", omega.len(), preds.len())?;
    let r = y - dot(omega, preds);
    Ok(c * r * r)
}

/// `sum_i omega_i c_i (y - f_i)^2` from precomputed predictions.
pub fn local_loss_from_preds(y: f64, omega: &[f64], preds: &[f64], c_list: &[f64]) -> Result<f64> {
    check_len("expert predictions", omega.len(), preds.len())?;
    check_len("local coefficients", omega.len(), c_list.len())?;
    Ok(omega
        .iter()
        .zip(preds)
        .zip(c_list)
        .map(|((w, f), ci)| w * ci * (y - f) * (y - f))
        .sum())
}

/// `sum_i omega_i c_i (y - f_i(x))^2`.
pub fn local_loss(x: &[f64], y: f64, experts: &[Expert], omega: &[f64], c_list: &[f64]) -> Result<f64> {
    check_len("weight vector", experts.len(), omega.len())?;
    let preds = experts
        .iter()
        .map(|e| e.predict(x))
        .collect::<Result<Vec<_>>>()?;
    local_loss_from_preds(y, omega, &preds, c_list)
}

pub(crate) fn c_list(hyper: &HyperParams, m: usize) -> Vec<f64> {
    (0..m).map(|i| hyper.c_i(i)).collect()
}

/// Per-sample loss `mix + beta * local` from precomputed predictions.
pub(crate) fn step_loss_from_preds(y: f64, omega: &[f64], preds: &[f64], hyper: &HyperParams, c_list: &[f64]) -> (f64, f64) {
    let fit = dot(omega, preds);
    let mix = hyper.c * (y - fit) * (y - fit);
    let local: f64 = omega
        .iter()
        .zip(preds)
        .zip(c_list)
        .map(|((w, f), ci)| w * ci * (y - f) * (y - f))
        .sum();
    (mix, local)
}

/// Blended loss of one time step.
pub fn step_loss(x: &[f64], y: f64, omega: &[f64], experts: &[Expert], hyper: &HyperParams) -> Result<f64> {
    check_len("weight vector", experts.len(), omega.len())?;
    let preds = experts
        .iter()
        .map(|e| e.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let cl = c_list(hyper, experts.len());
    let (mix, local) = step_loss_from_preds(y, omega, &preds, hyper, &cl);
    Ok(mix + hyper.beta * local)
}

/// `eta * sum_{t>=2} |Omega(t) - Omega(t-1)|^2`.
pub fn shaper(weights: &WeightSequence, eta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    eta * transition_sum(weights)
}

fn transition_sum(weights: &WeightSequence) -> f64 {
    let mut acc = 0.0;
    for t in 1..weights.len() {
        acc += weights
            .row(t)
            .iter()
            .zip(weights.row(t - 1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    acc
}

/// `lambda_theta * sum_i |theta_i|^2`.
pub fn regularizer(experts: &[Expert], lambda_theta: f64) -> f64 {
    lambda_theta
        * experts
            .iter()
            .map(|e| e.params.iter().map(|p| p * p).sum::<f64>())
            .sum::<f64>()
}

/// Full objective with its components reported separately.
pub fn total_cost(dataset: &Dataset, experts: &[Expert], weights: &WeightSequence, hyper: &HyperParams) -> Result<LossBreakdown> {
    let preds = expert_predictions(dataset, experts)?;
    total_cost_from_preds(dataset, experts, &preds, weights, hyper)
}

pub(crate) fn total_cost_from_preds(
    dataset: &Dataset,
    experts: &[Expert],
    preds: &[f64],
    weights: &WeightSequence,
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    let m = experts.len();
    if weights.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "weights vs dataset",
            expected: dataset.len(),
            got: weights.len(),
        });
    }
    check_len("weight rows", m, weights.n_experts())?;
    let cl = c_list(hyper, m);
    let (mut mix, mut local) = (0.0, 0.0);
    for (t, &y) in dataset.outputs().iter().enumerate() {
        let (a, b) = step_loss_from_preds(y, weights.row(t), &preds[t * m..(t + 1) * m], hyper, &cl);
        mix += a;
        local += b;
    }
    let reg = regularizer(experts, hyper.lambda_theta);
    let shp = shaper(weights, hyper.eta);
    Ok(LossBreakdown {
        mix_term: mix,
        local_term: local,
        regularizer_term: reg,
        shaper_term: shp,
        total: mix + hyper.beta * local + reg + shp,
    })
}

/// Cost of a jump model with 1-based mode sequence `modes`.
///
/// Evaluated in mode form: each step pays the loss of its single active
/// expert, and every mode switch costs `2 eta`.
pub fn jump_cost(dataset: &Dataset, experts: &[Expert], modes: &[usize], hyper: &HyperParams) -> Result<f64> {
    let m = experts.len();
    if modes.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "modes vs dataset",
            expected: dataset.len(),
            got: modes.len(),
        });
    }
    for (t, &s) in modes.iter().enumerate() {
        if s == 0 || s > m {
            return Err(Error::ModeOutOfRange { t, mode: s, m });
        }
    }
    let (mut mix, mut local) = (0.0, 0.0);
    for (t, &s) in modes.iter().enumerate() {
        let r = dataset.outputs()[t] - experts[s - 1].predict(dataset.regressor(t))?;
        mix += hyper.c * r * r;
        local += hyper.c_i(s - 1) * r * r;
    }
    let switches = modes.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(mix + hyper.beta * local + regularizer(experts, hyper.lambda_theta) + hyper.eta * 2.0 * switches as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureMap;

    fn lin(p: &[f64]) -> Expert {
        Expert::new(FeatureMap::Linear, p.to_vec())
    }

    #[test]
    fn mix_loss_examples() {
        assert_eq!(mix_loss(0.5, &[0.5, 0.5], &[1.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(mix_loss(1.0, &[0.5, 0.5], &[1.0, -1.0], 1.0).unwrap(), 1.0);
        let a = mix_loss(2.0, &[0.2, 0.8], &[1.0, -1.0], 1.0).unwrap();
        let b = mix_loss(2.0, &[0.2, 0.8], &[1.0, -1.0], 2.0).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(mix_loss(1.0, &[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn local_loss_examples() {
        let x = [1.0];
        let exact = [lin(&[3.0]), lin(&[3.0])];
        assert_eq!(local_loss(&x, 3.0, &exact, &[0.4, 0.6], &[1.0, 1.0]).unwrap(), 0.0);

        let e = [lin(&[1.0]), lin(&[2.0])];
        assert_eq!(local_loss(&x, 0.0, &e, &[0.5, 0.5], &[1.0, 1.0]).unwrap(), 2.5);

        let a = local_loss(&x, 0.0, &[lin(&[1.0]), lin(&[100.0])], &[1.0, 0.0], &[2.0, 1.0]).unwrap();
        assert_eq!(a, 2.0);
        assert!(local_loss(&x, 0.0, &e, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn step_loss_examples() {
        // preds [1, -1], y = 1 -> mix 1; preds [1, 2], y = 0 -> local 2.5.
        let h = HyperParams { beta: 0.0, ..Default::default() };
        let e = [lin(&[1.0]), lin(&[-1.0])];
        assert_eq!(step_loss(&[1.0], 1.0, &[0.5, 0.5], &e, &h).unwrap(), 1.0);

        let h = HyperParams { beta: 3.0, c: 0.0, ..Default::default() };
        let e = [lin(&[1.0]), lin(&[2.0])];
        assert_eq!(step_loss(&[1.0], 0.0, &[0.5, 0.5], &e, &h).unwrap(), 3.0 * 2.5);

        // y = 1, preds [1, -1]: mix 1, local 0.5*0 + 0.5*4 = 2.
        let h = HyperParams { beta: 1e-6, ..Default::default() };
        let e = [lin(&[1.0]), lin(&[-1.0])];
        let v = step_loss(&[1.0], 1.0, &[0.5, 0.5], &e, &h).unwrap();
        assert!((v - (1.0 + 1e-6 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn step_loss_matches_combined_oracle() {
        let mix = mix_loss(1.0, &[0.5, 0.5], &[1.0, -1.0], 1.0).unwrap();
        let local = local_loss_from_preds(0.0, &[0.5, 0.5], &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((mix + 1e-6 * local - (1.0 + 1e-6 * 2.5)).abs() < 1e-15);
    }

    #[test]
    fn shaper_examples() {
        let w = WeightSequence::constant(5, &[0.3, 0.7]).unwrap();
        assert_eq!(shaper(&w, 50.0), 0.0);
        let w = WeightSequence::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(shaper(&w, 50.0), 100.0);
        assert_eq!(shaper(&w, 0.0), 0.0);
        let one = WeightSequence::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(shaper(&one, 50.0), 0.0);
    }

    #[test]
    fn regularizer_examples() {
        assert_eq!(regularizer(&[lin(&[0.0, 0.0])], 3.0), 0.0);
        assert_eq!(regularizer(&[lin(&[3.0, 4.0])], 1.0), 25.0);
        assert_eq!(regularizer(&[lin(&[3.0, 4.0])], 0.0), 0.0);
    }

    #[test]
    fn total_cost_examples() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0], vec![3.0]], vec![2.0, 4.0, 6.0]).unwrap();
        let e = [lin(&[2.0]), lin(&[2.0])];
        let w = WeightSequence::constant(3, &[0.5, 0.5]).unwrap();
        let h = HyperParams { lambda_theta: 0.0, eta: 0.0, ..Default::default() };
        assert_eq!(total_cost(&d, &e, &w, &h).unwrap().total, 0.0);

        let d1 = Dataset::new(vec![vec![1.0]], vec![0.0]).unwrap();
        let e = [lin(&[1.0]), lin(&[-1.0])];
        let w = WeightSequence::from_rows(vec![vec![0.25, 0.75]]).unwrap();
        let h = HyperParams::default();
        let b = total_cost(&d1, &e, &w, &h).unwrap();
        let step = step_loss(&[1.0], 0.0, &[0.25, 0.75], &e, &h).unwrap();
        assert_eq!(b.shaper_term, 0.0);
        assert!((b.total - (step + regularizer(&e, h.lambda_theta))).abs() < 1e-15);

        let short = WeightSequence::uniform(2, 2);
        assert!(matches!(
            total_cost(&d, &e, &short, &h),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn jump_cost_examples() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0]], vec![1.0, 5.0]).unwrap();
        let h = HyperParams::default();
        let one = [lin(&[2.0])];
        let j = jump_cost(&d, &one, &[1, 1], &h).unwrap();
        let t = total_cost(&d, &one, &WeightSequence::uniform(2, 1), &h).unwrap().total;
        assert!((j - t).abs() <= 1e-12 * t.abs().max(1.0));

        let e = [lin(&[2.0]), lin(&[-1.0])];
        let j = jump_cost(&d, &e, &[2, 2], &HyperParams { lambda_theta: 0.0, ..h.clone() }).unwrap();
        // constant modes: no switch penalty, residuals 2 and 7
        assert!((j - (1.0 + 1e-6) * (4.0 + 49.0)).abs() < 1e-12);
        assert!(matches!(
            jump_cost(&d, &e, &[1, 3], &h),
            Err(Error::ModeOutOfRange { .. })
        ));
    }
}
