//! Fits the default synthetic benchmark and prints the recovered parameters.
//!
//! `cargo run --release --example benchmark_fit -- [restarts] [c] [c_local] [rho] [j_max]`

use std::time::Instant;

use blendfit::benchmark::{simulate, BenchmarkSpec};
use blendfit::{multistart_fit, FeatureMap, HyperParams};

fn main() -> blendfit::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let spec = BenchmarkSpec::default();
    let sim = simulate(&spec)?;
    println!("SNR {:.2} dB", sim.snr_db);
    let mut hyper = HyperParams {
        n_restarts: args.first().map(|&v| v as usize).unwrap_or(5),
        ..HyperParams::default()
    };
    if let Some(&c) = args.get(1) {
        hyper.c = c;
    }
    if let Some(&ci) = args.get(2) {
        hyper.c_local = vec![ci; 2];
    }
    if let Some(&rho) = args.get(3) {
        hyper.rho = rho;
    }
    if let Some(&j) = args.get(4) {
        hyper.j_max = j as usize;
    }
    let start = Instant::now();
    let report = multistart_fit(&sim.dataset, &[FeatureMap::Linear; 2], &hyper, None)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    println!(
        "restart {} of {:?}, {} iterations, {}",
        report.restart_index, report.all_restart_costs, report.iterations, report.termination_reason
    );
    for (e, th) in report.model.experts.iter().zip(&spec.theta_true) {
        println!("theta {:?} (true {:?})", e.params, th);
    }
    let truth = sim.dataset.true_weights().expect("generated data carry weights");
    println!("weight MAE {:.4}", report.model.train_weights.mean_abs_diff(truth));
    if report.model.n_experts() == 2 {
        let swapped = blendfit::WeightSequence::from_rows(
            truth.rows().map(|r| vec![r[1], r[0]]).collect(),
        )?;
        println!("weight MAE, labels swapped {:.4}", report.model.train_weights.mean_abs_diff(&swapped));
    }
    Ok(())
}
