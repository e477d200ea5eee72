mod common;

use blendfit::inference::{optimal_output, recursive_objective};
use blendfit::{
    gate_predict, mixture_predict, predict_filtered, predict_recursive, train_gating, validate_weights, Expert,
    FeatureMap, HyperParams, WeightSequence,
};
use common::*;
use proptest::prelude::*;

fn lin(p: &[f64]) -> Expert {
    Expert::new(FeatureMap::Linear, p.to_vec())
}

fn preds(experts: &[Expert], x: &[f64]) -> Vec<f64> {
    experts.iter().map(|e| e.predict(x).unwrap()).collect()
}

#[test]
fn dominant_shaper_keeps_the_previous_row() {
    let e = [lin(&[1.0, -2.0]), lin(&[0.5, 3.0])];
    let x = [0.4, 0.9];
    let prev = [0.3, 0.7];
    let h = HyperParams { eta: 1e12, beta: 0.2, ..Default::default() };
    let est = predict_recursive(&x, &prev, &e, &h).unwrap();
    for (a, b) in est.omega.iter().zip(&prev) {
        assert!((a - b).abs() < 1e-6);
    }
    let y = optimal_output(&prev, &preds(&e, &x), &h);
    assert!((est.y_hat - y).abs() < 1e-6);
}

#[test]
fn recursive_estimate_matches_a_scan() {
    let mut r = rng(30);
    for (beta, eta) in [(0.0, 0.0), (0.0, 0.5), (0.3, 0.0), (0.3, 2.0)] {
        for _ in 0..10 {
            let e = random_experts(&mut r, 2, 3);
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
            let prev = random_weights(&mut r, 1, 2);
            let h = HyperParams { beta, eta, ..Default::default() };
            let f = preds(&e, &x);
            let est = predict_recursive(&x, prev.row(0), &e, &h).unwrap();
            let obj = |om: &[f64]| recursive_objective(optimal_output(om, &f, &h), om, prev.row(0), &f, &h);
            let best = scan_two(obj);
            let got = recursive_objective(est.y_hat, &est.omega, prev.row(0), &f, &h);
            assert!(got <= best + 1e-3, "beta {beta} eta {eta}: {got} vs {best}");
        }
    }
}

#[test]
fn agreeing_experts_leave_weights_alone() {
    let e = [lin(&[1.0, 1.0]), lin(&[1.0, 1.0]), lin(&[1.0, 1.0])];
    let prev = [0.2, 0.5, 0.3];
    let est = predict_recursive(&[0.3, -0.1], &prev, &e, &HyperParams::default()).unwrap();
    assert!((est.y_hat - 0.2).abs() < 1e-12);
    for (a, b) in est.omega.iter().zip(&prev) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn filtered_without_shaper_is_pointwise_recursive() {
    let mut r = rng(31);
    let e = random_experts(&mut r, 3, 2);
    let d = random_dataset(&mut r, 25, 2);
    let h = HyperParams { eta: 0.0, beta: 0.4, ..Default::default() };
    let (y, w) = predict_filtered(d.regressors(), d.outputs(), &e, &h).unwrap();
    let uniform = [1.0 / 3.0; 3];
    for t in 0..d.len() {
        let est = predict_recursive(d.regressor(t), &uniform, &e, &h).unwrap();
        assert!((est.y_hat - y[t]).abs() < 1e-12);
        for (a, b) in est.omega.iter().zip(w.row(t)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn first_filtered_step_has_no_history() {
    let e = [lin(&[1.0, -0.5]), lin(&[-0.3, 2.0])];
    let x = vec![vec![0.6, 0.2]];
    let h = HyperParams { eta: 5.0, beta: 0.5, ..Default::default() };
    let (y, w) = predict_filtered(&x, &[], &e, &h).unwrap();
    let free = HyperParams { eta: 0.0, ..h.clone() };
    let est = predict_recursive(&x[0], &[0.5, 0.5], &e, &free).unwrap();
    assert!((y[0] - est.y_hat).abs() < 1e-6);
    for (a, b) in w.row(0).iter().zip(&est.omega) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn filtered_and_chained_recursive_stay_feasible() {
    let mut r = rng(32);
    let truth = random_experts(&mut r, 2, 3);
    let wt = random_weights(&mut r, 50, 2);
    let d = mixture_data(&mut r, &truth, &wt, 0.05);
    let h = HyperParams { eta: 1e-3, ..Default::default() };
    let (_, wf) = predict_filtered(d.regressors(), d.outputs(), &truth, &h).unwrap();
    let mut prev = vec![0.5, 0.5];
    let mut rows = Vec::new();
    for t in 0..d.len() {
        let est = predict_recursive(d.regressor(t), &prev, &truth, &h).unwrap();
        prev = est.omega.clone();
        rows.push(est.omega);
    }
    assert_feasible(&wf);
    assert_feasible(&WeightSequence::from_rows(rows).unwrap());
}

#[test]
fn gating_reproduces_training_rows_with_one_neighbour() {
    let mut r = rng(33);
    let d = random_dataset(&mut r, 40, 3);
    let w = random_weights(&mut r, 40, 3);
    let g = train_gating(d.regressors(), &w, 1).unwrap();
    for t in 0..d.len() {
        assert_eq!(gate_predict(&g, d.regressor(t)).unwrap(), w.row(t));
    }
}

#[test]
fn gating_with_identical_rows_returns_that_row() {
    let mut r = rng(34);
    let d = random_dataset(&mut r, 15, 2);
    let w = WeightSequence::constant(15, &[0.25, 0.75]).unwrap();
    let g = train_gating(d.regressors(), &w, 4).unwrap();
    for q in [[0.0, 0.0], [5.0, -3.0], [0.1, 0.2]] {
        let p = gate_predict(&g, &q).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }
}

#[test]
fn equidistant_neighbours_give_the_mean_row() {
    let xs = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let w = WeightSequence::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
    let g = train_gating(&xs, &w, 4).unwrap();
    let p = gate_predict(&g, &[0.0, 0.0]).unwrap();
    assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12, "{p:?}");
}

#[test]
fn tiny_query_perturbations_keep_the_neighbour_set() {
    let mut r = rng(35);
    let d = random_dataset(&mut r, 60, 2);
    let w = random_weights(&mut r, 60, 3);
    let g = train_gating(d.regressors(), &w, 1).unwrap();
    let mut checked = 0;
    for _ in 0..200 {
        let q: Vec<f64> = (0..2).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        let mut dist: Vec<f64> = d
            .regressors()
            .iter()
            .map(|s| s.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        dist.sort_by(f64::total_cmp);
        if dist[1] - dist[0] <= 1e-6 {
            continue;
        }
        checked += 1;
        let moved: Vec<f64> = q.iter().map(|v| v + 1e-12).collect();
        assert_eq!(gate_predict(&g, &q).unwrap(), gate_predict(&g, &moved).unwrap());
    }
    assert!(checked > 100);
}

#[test]
fn gating_rejects_oversized_k() {
    let w = WeightSequence::uniform(3, 2);
    assert!(train_gating(&[vec![0.0], vec![1.0], vec![2.0]], &w, 4).is_err());
}

proptest! {
    #[test]
    fn recursive_estimate_never_worse_than_staying_put(
        seed in 0u64..10_000,
        m in 2usize..4,
        beta in 0.0f64..1.0,
        eta in 0.0f64..10.0,
    ) {
        let mut r = rng(seed);
        let e = random_experts(&mut r, m, 2);
        let x: Vec<f64> = (0..2).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        let prev = random_weights(&mut r, 1, m);
        let h = HyperParams { beta, eta, ..Default::default() };
        let f = preds(&e, &x);
        let est = predict_recursive(&x, prev.row(0), &e, &h).unwrap();
        prop_assert!(validate_weights(std::slice::from_ref(&est.omega)).is_ok());
        let stay = mixture_predict(&e, prev.row(0), &x).unwrap();
        let base = recursive_objective(stay, prev.row(0), prev.row(0), &f, &h);
        let got = recursive_objective(est.y_hat, &est.omega, prev.row(0), &f, &h);
        prop_assert!(got <= base + 1e-9, "{got} > {base}");
    }

    #[test]
    fn gating_output_is_feasible(seed in 0u64..10_000, k in 1usize..8) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, 10, 2);
        let w = random_weights(&mut r, 10, 3);
        let g = train_gating(d.regressors(), &w, k).unwrap();
        let q: Vec<f64> = (0..2).map(|_| rand::Rng::random_range(&mut r, -2.0..2.0)).collect();
        let p = gate_predict(&g, &q).unwrap();
        prop_assert!(validate_weights(&[p]).is_ok());
    }
}
