//! Shared fixtures and independent reference solvers for the integration tests.
#![allow(dead_code)]

use blendfit::{Dataset, Expert, FeatureMap, HyperParams, WeightSequence};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, t: usize, n_x: usize) -> Dataset {
    let xs: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..n_x).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
    Dataset::new(xs, ys).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, t: usize, m: usize) -> WeightSequence {
    let rows = (0..t)
        .map(|_| {
            let r: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0f64) + 1e-3).collect();
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect();
    WeightSequence::from_rows(rows).unwrap()
}

pub fn random_experts(rng: &mut ChaCha8Rng, m: usize, n_x: usize) -> Vec<Expert> {
    (0..m)
        .map(|_| Expert::new(FeatureMap::Linear, (0..n_x).map(|_| rng.random_range(-1.5..1.5)).collect()))
        .collect()
}

/// Data generated by a mixture of linear experts plus optional noise.
pub fn mixture_data(rng: &mut ChaCha8Rng, experts: &[Expert], weights: &WeightSequence, noise: f64) -> Dataset {
    let n_x = experts[0].params.len();
    let t = weights.len();
    let xs: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..n_x).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = xs
        .iter()
        .enumerate()
        .map(|(k, x)| blendfit::mixture_predict(experts, weights.row(k), x).unwrap() + noise * rng.random_range(-1.0..1.0))
        .collect();
    Dataset::new(xs, ys).unwrap().with_true_weights(weights.clone()).unwrap()
}

/// Direct minimiser of the expert block of the cost for fixed weights:
///
/// `sum_t c (y - sum_i w_i phi_i theta_i)^2 + beta sum_i sum_t w_i c_i (y - phi_i theta_i)^2 + lambda |Theta|^2`,
/// solved through the stacked normal equations with an LU factorisation.
pub fn joint_expert_oracle(d: &Dataset, maps: &[FeatureMap], w: &WeightSequence, h: &HyperParams) -> Vec<Vec<f64>> {
    let dims: Vec<usize> = maps.iter().map(|m| m.dim(d.n_x())).collect();
    let offs: Vec<usize> = dims.iter().scan(0, |s, &p| { let o = *s; *s += p; Some(o) }).collect();
    let n: usize = dims.iter().sum();
    let mut a = DMatrix::<f64>::identity(n, n) * h.lambda_theta;
    let mut b = DVector::<f64>::zeros(n);
    for t in 0..d.len() {
        let y = d.outputs()[t];
        let row = w.row(t);
        let mut g = DVector::<f64>::zeros(n);
        for (i, map) in maps.iter().enumerate() {
            let phi = map.features(d.regressor(t));
            for (k, v) in phi.iter().enumerate() {
                g[offs[i] + k] = row[i] * v;
            }
            let s = h.beta * row[i] * h.c_i(i);
            for a1 in 0..dims[i] {
                b[offs[i] + a1] += s * y * phi[a1];
                for a2 in 0..dims[i] {
                    a[(offs[i] + a1, offs[i] + a2)] += s * phi[a1] * phi[a2];
                }
            }
        }
        a += &g * g.transpose() * h.c;
        b += &g * (h.c * y);
    }
    let x = a.lu().solve(&b).expect("oracle system is nonsingular");
    (0..maps.len())
        .map(|i| x.as_slice()[offs[i]..offs[i] + dims[i]].to_vec())
        .collect()
}

/// Brute-force simplex projection over a grid of resolution `step` (M = 2 or 3).
pub fn grid_projection(v: &[f64], step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    let dist = |w: &[f64]| w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best = (f64::INFINITY, vec![]);
    match v.len() {
        2 => {
            for i in 0..=n {
                let a = i as f64 * step;
                let w = [a, 1.0 - a];
                let d = dist(&w);
                if d < best.0 {
                    best = (d, w.to_vec());
                }
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let (a, b) = (i as f64 * step, j as f64 * step);
                    let w = [a, b, (1.0 - a - b).max(0.0)];
                    let d = dist(&w);
                    if d < best.0 {
                        best = (d, w.to_vec());
                    }
                }
            }
        }
        _ => panic!("grid projection supports M = 2 or 3"),
    }
    best.1
}

/// Minimum of a function of the first weight over `{0, 0.001, ..., 1}` for M = 2.
pub fn scan_two(f: impl Fn(&[f64]) -> f64) -> f64 {
    (0..=1000)
        .map(|k| {
            let a = k as f64 / 1000.0;
            f(&[a, 1.0 - a])
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn assert_feasible(w: &WeightSequence) {
    let r = w.validate();
    assert!(r.is_ok(), "infeasible weights: {:?}", r.first());
}
