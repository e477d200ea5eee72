//! Weight estimation for new data: recursive, filtered and gating-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::c_list;
use crate::types::{dot, validate_weights, Expert, HyperParams, WeightSequence};
use crate::weight_fit::{project_simplex, WindowProblem};

const ALT_TOL: f64 = 1e-8;
const ALT_MAX_ITER: usize = 5000;

/// One-step estimate of the output and the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub y_hat: f64,
    pub omega: Vec<f64>,
    pub converged: bool,
}

fn check_row(what: &'static str, row: &[f64], m: usize) -> Result<()> {
    if row.len() != m {
        return Err(Error::DimensionMismatch {
            what,
            expected: m,
            got: row.len(),
        });
    }
    if let Some(v) = validate_weights(&[row.to_vec()]).first() {
        return Err(Error::InfeasibleWeights(v.to_string()));
    }
    Ok(())
}

fn predictions(experts: &[Expert], x: &[f64]) -> Result<Vec<f64>> {
    experts.iter().map(|e| e.predict(x)).collect()
}

/// Output minimising the step loss for fixed weights.
pub fn optimal_output(omega: &[f64], preds: &[f64], hyper: &HyperParams) -> f64 {
    let cl = c_list(hyper, preds.len());
    let mix = dot(omega, preds);
    let (mut num, mut den) = (hyper.c * mix, hyper.c);
    for ((w, f), ci) in omega.iter().zip(preds).zip(&cl) {
        num += hyper.beta * w * ci * f;
        den += hyper.beta * w * ci;
    }
    if den > 0.0 {
        num / den
    } else {
        mix
    }
}

/// `c (y - Omega.f)^2 + beta sum_i omega_i c_i (y - f_i)^2 + eta |Omega - omega_prev|^2`.
pub fn recursive_objective(y: f64, omega: &[f64], omega_prev: &[f64], preds: &[f64], hyper: &HyperParams) -> f64 {
    let cl = c_list(hyper, preds.len());
    let r = y - dot(omega, preds);
    let local: f64 = omega
        .iter()
        .zip(preds)
        .zip(&cl)
        .map(|((w, f), ci)| w * ci * (y - f) * (y - f))
        .sum();
    let shift: f64 = omega.iter().zip(omega_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    hyper.c * r * r + hyper.beta * local + hyper.eta * shift
}

/// Joint output and weight estimate given the previous weight estimate.
///
/// Alternates the closed-form output update with a projected-gradient
/// weight update started at `omega_prev`.
pub fn predict_recursive(x: &[f64], omega_prev: &[f64], experts: &[Expert], hyper: &HyperParams) -> Result<Estimate> {
    let m = experts.len();
    hyper.validate(m)?;
    check_row("previous weights", omega_prev, m)?;
    let preds = predictions(experts, x)?;
    Ok(recursive_from_preds(&preds, omega_prev, hyper))
}

fn recursive_from_preds(preds: &[f64], omega_prev: &[f64], hyper: &HyperParams) -> Estimate {
    let m = preds.len();
    let cl = c_list(hyper, m);
    let mut omega = omega_prev.to_vec();
    let mut y = optimal_output(&omega, preds, hyper);
    let anchor = (hyper.eta != 0.0).then_some(omega_prev);
    for _ in 0..ALT_MAX_ITER {
        let ys = [y];
        let p = WindowProblem::new(&ys, preds, m, hyper, &cl, anchor, None);
        let next = p.solve(&omega).weights;
        let y_next = optimal_output(&next, preds, hyper);
        let dw = next.iter().zip(&omega).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        let dy = (y_next - y).abs();
        omega = next;
        y = y_next;
        if dw < ALT_TOL && dy < ALT_TOL {
            return Estimate {
                y_hat: y,
                omega,
                converged: true,
            };
        }
    }
    log::warn!("recursive weight estimate stopped at the alternation cap");
    Estimate {
        y_hat: y,
        omega,
        converged: false,
    }
}

/// One-step-ahead estimates over a sequence.
///
/// At step `t` the weights of the last `filter_horizon` steps are
/// re-estimated jointly, using observed outputs before `t` and treating the
/// output at `t` as unknown. Older rows are frozen and the newest frozen row
/// anchors the window. `y_past` must hold at least `x_seq.len() - 1` values;
/// `y_past[t]` is used only from step `t + 1` on.
pub fn predict_filtered(
    x_seq: &[Vec<f64>],
    y_past: &[f64],
    experts: &[Expert],
    hyper: &HyperParams,
) -> Result<(Vec<f64>, WeightSequence)> {
    let m = experts.len();
    hyper.validate(m)?;
    let n = x_seq.len();
    if n == 0 {
        return Err(Error::Empty("regressor sequence"));
    }
    if y_past.len() + 1 < n {
        return Err(Error::LengthMismatch {
            what: "past outputs",
            expected: n - 1,
            got: y_past.len(),
        });
    }
    let preds: Vec<f64> = x_seq
        .iter()
        .map(|x| predictions(experts, x))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let uniform = vec![1.0 / m as f64; m];
    let mut y_hat = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n * m);

    if hyper.eta == 0.0 {
        for t in 0..n {
            let e = recursive_from_preds(&preds[t * m..(t + 1) * m], &uniform, hyper);
            y_hat.push(e.y_hat);
            out.extend(e.omega);
        }
        return Ok((y_hat, WeightSequence::from_flat_unchecked(m, out)));
    }

    let cl = c_list(hyper, m);
    let horizon = hyper.filter_horizon;
    // Latest estimate of every row seen so far.
    let mut est: Vec<f64> = Vec::with_capacity(n * m);
    let mut ys: Vec<f64> = Vec::with_capacity(horizon);
    for t in 0..n {
        let h0 = (t + 1).saturating_sub(horizon);
        let last = if t == 0 { uniform.clone() } else { est[(t - 1) * m..t * m].to_vec() };
        est.extend_from_slice(&last);
        let anchor = (h0 > 0).then(|| est[(h0 - 1) * m..h0 * m].to_vec());
        ys.clear();
        ys.extend_from_slice(&y_past[h0..t]);
        let mut y = optimal_output(&est[t * m..(t + 1) * m], &preds[t * m..(t + 1) * m], hyper);
        ys.push(y);
        let mut converged = false;
        for _ in 0..ALT_MAX_ITER {
            *ys.last_mut().expect("current step") = y;
            let p = WindowProblem::new(&ys, &preds[h0 * m..(t + 1) * m], m, hyper, &cl, anchor.as_deref(), None);
            let sol = p.solve(&est[h0 * m..(t + 1) * m]);
            let dw = sol.weights[(t - h0) * m..]
                .iter()
                .zip(&est[t * m..])
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            est[h0 * m..(t + 1) * m].copy_from_slice(&sol.weights);
            let y_next = optimal_output(&est[t * m..(t + 1) * m], &preds[t * m..(t + 1) * m], hyper);
            let dy = (y_next - y).abs();
            y = y_next;
            if dw < ALT_TOL && dy < ALT_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("filtered weight estimate at t={t} stopped at the alternation cap");
        }
        y_hat.push(y);
        out.extend_from_slice(&est[t * m..(t + 1) * m]);
    }
    Ok((y_hat, WeightSequence::from_flat_unchecked(m, out)))
}

/// Nearest-neighbour map from regressors to weight rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingModel {
    pub k: usize,
    pub train_x: Vec<Vec<f64>>,
    pub train_w: WeightSequence,
}

pub fn train_gating(train_x: &[Vec<f64>], omega_star: &WeightSequence, k: usize) -> Result<GatingModel> {
    if train_x.is_empty() {
        return Err(Error::Empty("gating training set"));
    }
    if train_x.len() != omega_star.len() {
        return Err(Error::LengthMismatch {
            what: "gating regressors vs weights",
            expected: train_x.len(),
            got: omega_star.len(),
        });
    }
    if k == 0 || k > train_x.len() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            train_x.len()
        )));
    }
    let n_x = train_x[0].len();
    if let Some(bad) = train_x.iter().find(|x| x.len() != n_x) {
        return Err(Error::DimensionMismatch {
            what: "gating regressor",
            expected: n_x,
            got: bad.len(),
        });
    }
    Ok(GatingModel {
        k,
        train_x: train_x.to_vec(),
        train_w: omega_star.clone(),
    })
}

/// Inverse-distance average of the `k` nearest stored rows. Stored
/// regressors at distance zero, if any, are averaged alone.
pub fn gate_predict(model: &GatingModel, x: &[f64]) -> Result<Vec<f64>> {
    let n_x = model.train_x[0].len();
    if x.len() != n_x {
        return Err(Error::DimensionMismatch {
            what: "gating query",
            expected: n_x,
            got: x.len(),
        });
    }
    let mut dist: Vec<(f64, usize)> = model
        .train_x
        .iter()
        .enumerate()
        .map(|(i, s)| (s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let near = &dist[..model.k];
    let m = model.train_w.n_experts();
    let mut acc = vec![0.0; m];
    let exact: Vec<usize> = near.iter().filter(|(d, _)| *d == 0.0).map(|&(_, i)| i).collect();
    let weighted: Vec<(f64, usize)> = if exact.is_empty() {
        near.iter().map(|&(d, i)| (1.0 / d, i)).collect()
    } else {
        exact.iter().map(|&i| (1.0, i)).collect()
    };
    let total: f64 = weighted.iter().map(|p| p.0).sum();
    for &(w, i) in &weighted {
        for (a, v) in acc.iter_mut().zip(model.train_w.row(i)) {
            *a += w / total * v;
        }
    }
    if validate_weights(&[acc.clone()]).is_ok() {
        Ok(acc)
    } else {
        project_simplex(&acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureMap;

    fn lin(p: f64) -> Expert {
        Expert::new(FeatureMap::Linear, vec![p])
    }

    #[test]
    fn output_update_examples() {
        let h = HyperParams { beta: 0.0, ..Default::default() };
        assert_eq!(optimal_output(&[0.25, 0.75], &[1.0, 3.0], &h), 2.5);
        let h = HyperParams { beta: 1.0, c: 0.0, ..Default::default() };
        assert_eq!(optimal_output(&[0.5, 0.5], &[1.0, 3.0], &h), 2.0);
    }

    #[test]
    fn agreeing_experts_keep_previous_weights() {
        let h = HyperParams { beta: 0.5, eta: 1.0, ..Default::default() };
        let e = predict_recursive(&[2.0], &[0.3, 0.7], &[lin(1.5), lin(1.5)], &h).unwrap();
        assert!((e.y_hat - 3.0).abs() < 1e-12);
        assert_eq!(e.omega, vec![0.3, 0.7]);
    }

    #[test]
    fn gating_examples() {
        let xs = vec![vec![0.0], vec![1.0], vec![3.0]];
        let w = WeightSequence::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let g = train_gating(&xs, &w, 1).unwrap();
        assert_eq!(gate_predict(&g, &[1.0]).unwrap(), vec![0.0, 1.0]);
        let g = train_gating(&xs, &w, 2).unwrap();
        // Neighbours 0 and 1 at distance 0.5 each.
        assert_eq!(gate_predict(&g, &[0.5]).unwrap(), vec![0.5, 0.5]);
        assert!(train_gating(&xs, &w, 4).is_err());
        assert!(gate_predict(&g, &[0.0, 1.0]).is_err());
    }
}
