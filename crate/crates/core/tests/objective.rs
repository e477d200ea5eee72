mod common;

use blendfit::benchmark::{simulate_mixture, BenchmarkSpec};
use blendfit::objective::step_loss;
use blendfit::{
    jump_cost, mixture_predict, total_cost, validate_weights, Expert, FeatureMap, HyperParams, WeightSequence,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn hyper_from(r: &mut impl Rng, m: usize) -> HyperParams {
    HyperParams {
        beta: r.random_range(0.0..2.0),
        lambda_theta: r.random_range(0.0..1.0),
        eta: r.random_range(0.0..60.0),
        c: r.random_range(0.0..3.0),
        c_local: (0..m).map(|_| r.random_range(0.1..3.0)).collect(),
        ..Default::default()
    }
}

/// Cost summed term by term from per-step losses.
fn cost_oracle(d: &blendfit::Dataset, e: &[Expert], w: &WeightSequence, h: &HyperParams) -> f64 {
    let mut j = 0.0;
    for t in 0..d.len() {
        j += step_loss(d.regressor(t), d.outputs()[t], w.row(t), e, h).unwrap();
        if t > 0 {
            j += h.eta * w.row(t).iter().zip(w.row(t - 1)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    j + h.lambda_theta * e.iter().flat_map(|x| &x.params).map(|p| p * p).sum::<f64>()
}

#[test]
fn generator_round_trip_has_zero_cost() {
    let spec = BenchmarkSpec { horizon: 2000, noise_var: 0.0, ..Default::default() };
    let d = simulate_mixture(&spec).unwrap();
    let e: Vec<Expert> = spec.theta_true.iter().map(|t| Expert::new(FeatureMap::Linear, t.clone())).collect();
    let h = HyperParams { eta: 0.0, lambda_theta: 0.0, beta: 0.0, ..Default::default() };
    let j = total_cost(&d, &e, d.true_weights().unwrap(), &h).unwrap().total;
    assert!(j < 1e-20, "{j}");
}

#[test]
fn single_mode_jump_cost_is_the_all_ones_cost() {
    let mut r = rng(40);
    let d = random_dataset(&mut r, 12, 2);
    let e = random_experts(&mut r, 1, 2);
    let h = hyper_from(&mut r, 1);
    let j = jump_cost(&d, &e, &[1; 12], &h).unwrap();
    let t = total_cost(&d, &e, &WeightSequence::uniform(12, 1), &h).unwrap();
    assert!((j - t.total).abs() <= 1e-12 * t.total.max(1.0));
    assert_eq!(t.shaper_term, 0.0);
}

#[test]
fn polynomial_expert_survives_serialisation() {
    let mut r = rng(41);
    let map = FeatureMap::Polynomial { degree: 3 };
    let params: Vec<f64> = (0..map.dim(3)).map(|_| r.random_range(-1.0..1.0)).collect();
    let e = Expert::new(map, params);
    let back: Expert = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        assert_eq!(e.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn jump_cost_equals_one_hot_total_cost(seed in any::<u64>(), t in 1usize..21, m in 1usize..4) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, t, 3);
        let e = random_experts(&mut r, m, 3);
        let h = hyper_from(&mut r, m);
        let modes: Vec<usize> = (0..t).map(|_| r.random_range(1..=m)).collect();
        let j = jump_cost(&d, &e, &modes, &h).unwrap();
        let w = WeightSequence::one_hot(&modes, m).unwrap();
        let total = total_cost(&d, &e, &w, &h).unwrap().total;
        prop_assert!((j - total).abs() <= 1e-12 * total.abs().max(1.0), "{j} vs {total}");
    }

    #[test]
    fn total_cost_matches_termwise_sum(seed in any::<u64>(), t in 1usize..30, m in 1usize..4) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, t, 2);
        let e = random_experts(&mut r, m, 2);
        let w = random_weights(&mut r, t, m);
        let h = hyper_from(&mut r, m);
        let b = total_cost(&d, &e, &w, &h).unwrap();
        let o = cost_oracle(&d, &e, &w, &h);
        prop_assert!(b.total >= 0.0);
        prop_assert!((b.total - o).abs() <= 1e-10 * o.max(1.0));
        let parts = b.mix_term + h.beta * b.local_term + b.regularizer_term + b.shaper_term;
        prop_assert!((b.total - parts).abs() <= 1e-12 * b.total.max(1.0));
    }

    #[test]
    fn cost_is_convex_in_each_block(seed in any::<u64>(), t in 2usize..25, m in 2usize..4) {
        let mut r = rng(seed);
        let d = random_dataset(&mut r, t, 2);
        let h = hyper_from(&mut r, m);
        let e = random_experts(&mut r, m, 2);
        let (wa, wb) = (random_weights(&mut r, t, m), random_weights(&mut r, t, m));
        let mid = WeightSequence::from_flat(
            m,
            wa.as_flat().iter().zip(wb.as_flat()).map(|(a, b)| 0.5 * (a + b)).collect(),
        )
        .unwrap();
        let j = |w: &WeightSequence| total_cost(&d, &e, w, &h).unwrap().total;
        prop_assert!(j(&mid) <= 0.5 * (j(&wa) + j(&wb)) + 1e-9);

        let w = random_weights(&mut r, t, m);
        let (ea, eb) = (random_experts(&mut r, m, 2), random_experts(&mut r, m, 2));
        let emid: Vec<Expert> = ea
            .iter()
            .zip(&eb)
            .map(|(a, b)| Expert::new(FeatureMap::Linear, a.params.iter().zip(&b.params).map(|(p, q)| 0.5 * (p + q)).collect()))
            .collect();
        let k = |e: &[Expert]| total_cost(&d, e, &w, &h).unwrap().total;
        prop_assert!(k(&emid) <= 0.5 * (k(&ea) + k(&eb)) + 1e-9);
    }

    #[test]
    fn mixture_prediction_is_affine_in_the_weights(seed in any::<u64>(), m in 1usize..5, lam in 0.0f64..1.0) {
        let mut r = rng(seed);
        let e = random_experts(&mut r, m, 3);
        let w = random_weights(&mut r, 2, m);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let blend: Vec<f64> = w.row(0).iter().zip(w.row(1)).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let lhs = mixture_predict(&e, &blend, &x).unwrap();
        let rhs = lam * mixture_predict(&e, w.row(0), &x).unwrap() + (1.0 - lam) * mixture_predict(&e, w.row(1), &x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
        let k = r.random_range(0..m);
        let mut hot = vec![0.0; m];
        hot[k] = 1.0;
        prop_assert_eq!(mixture_predict(&e, &hot, &x).unwrap(), e[k].predict(&x).unwrap());
    }

    #[test]
    fn validation_flags_rows_off_the_simplex(row in prop::collection::vec(-0.5f64..1.5, 1..5)) {
        let s: f64 = row.iter().sum();
        let feasible = row.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)) && (s - 1.0).abs() <= 1e-9;
        prop_assert_eq!(validate_weights(&[row]).is_ok(), feasible);
    }
}
