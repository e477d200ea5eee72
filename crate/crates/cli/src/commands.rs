use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use blendfit::benchmark::{gof, mae, simulate, sweep, sweep_csv, sweep_summary, SweepConfig, SweepParam};
use blendfit::io::{load_dataset, load_model, read_predictions, read_regressors, save_dataset, save_model, write_predictions};
use blendfit::{
    gate_predict, mixture_predict, multistart_fit, predict_filtered, predict_recursive, train_gating, FeatureMap,
    HyperParams, WeightSequence,
};

use crate::config::{parse_experts, require_file, require_writable, RunConfig};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.common.config.as_deref())?;
    let seed = cli.common.seed.or(cfg.seed).unwrap_or(0);
    let jobs = cli.common.jobs.map(|j| j as usize).or(cfg.jobs).unwrap_or(1);
    if jobs == 0 {
        bail!("jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting worker threads")?;
    let out = cli.common.out.clone().or(cfg.out.clone());

    match cli.command {
        Command::Gen { spec } => {
            let mut s = cfg.benchmark()?;
            spec.apply(&mut s);
            s.seed = seed;
            let out = need(out, "out")?;
            require_writable(&out)?;
            let sim = simulate(&s)?;
            save_dataset(&out, &sim.dataset)?;
            println!("rows: {}", sim.dataset.len());
            println!("snr_db: {:.4}", sim.snr_db);
            Ok(())
        }
        Command::Fit { data, experts, trace, hyper } => {
            let data = need(data.or(cfg.data.clone()), "data")?;
            let out = need(out, "out")?;
            let trace = trace.or(cfg.trace.clone()).unwrap_or_else(|| out.with_extension("trace.csv"));
            require_file(&data)?;
            require_writable(&out)?;
            require_writable(&trace)?;
            let specs = experts_or_default(experts.or(cfg.experts.clone()))?;
            let mut h = overlay(&HyperParams::default(), &cfg)?;
            hyper.apply(&mut h);
            h.seed = seed;
            h.validate(specs.len())?;
            let d = load_dataset(&data)?;
            let report = multistart_fit(&d, &specs, &h, None)?;
            let mut model = report.model.clone();
            let k = h.gating_k.min(d.len());
            model.gating = Some(train_gating(d.regressors(), &model.train_weights, k)?);
            save_model(&out, &model)?;
            std::fs::write(&trace, report.cost_trace_csv())?;
            println!("final_cost: {:e}", report.final_cost());
            println!("termination: {}", report.termination_reason);
            println!("iterations: {}", report.iterations);
            println!("restart: {} of {}", report.restart_index, report.all_restart_costs.len());
            for (i, e) in model.experts.iter().enumerate() {
                let p: Vec<String> = e.params.iter().map(|v| format!("{v:.6}")).collect();
                println!("theta{} ({}): [{}]", i + 1, e.map, p.join(", "));
            }
            Ok(())
        }
        Command::Predict { model, data, mode, hyper } => {
            let model_path = need(model.or(cfg.model.clone()), "model")?;
            let data = need(data.or(cfg.data.clone()), "data")?;
            let out = need(out, "out")?;
            let mode = mode.or(cfg.mode.clone()).unwrap_or_else(|| "recursive".into());
            require_file(&model_path)?;
            require_file(&data)?;
            require_writable(&out)?;
            let mut model = load_model(&model_path)?;
            let mut h = overlay(&model.hyper, &cfg)?;
            hyper.apply(&mut h);
            h.validate(model.n_experts())?;
            let (xs, ys) = read_regressors(File::open(&data)?)?;
            let m = model.n_experts();
            let (y_hat, w) = match mode.as_str() {
                "recursive" => {
                    let mut prev = vec![1.0 / m as f64; m];
                    let mut y = Vec::with_capacity(xs.len());
                    let mut rows = Vec::with_capacity(xs.len());
                    for x in &xs {
                        let est = predict_recursive(x, &prev, &model.experts, &h)?;
                        prev.clone_from(&est.omega);
                        y.push(est.y_hat);
                        rows.push(est.omega);
                    }
                    (y, WeightSequence::from_rows(rows)?)
                }
                "filtered" => {
                    let ys = ys.ok_or_else(|| anyhow!("filtered mode needs a y column in {}", data.display()))?;
                    predict_filtered(&xs, &ys, &model.experts, &h)?
                }
                "gating" => {
                    let gating = match model.gating.take() {
                        Some(g) if hyper.gating_k.is_none_or(|k| k == g.k) => g,
                        Some(g) => train_gating(&g.train_x, &g.train_w, h.gating_k)?,
                        None => bail!("model {} has no gating model", model_path.display()),
                    };
                    let mut y = Vec::with_capacity(xs.len());
                    let mut rows = Vec::with_capacity(xs.len());
                    for x in &xs {
                        let omega = gate_predict(&gating, x)?;
                        y.push(mixture_predict(&model.experts, &omega, x)?);
                        rows.push(omega);
                    }
                    (y, WeightSequence::from_rows(rows)?)
                }
                other => bail!("unknown mode '{other}' (expected recursive, filtered or gating)"),
            };
            write_predictions(BufWriter::new(File::create(&out)?), &y_hat, &w)?;
            println!("rows: {}", y_hat.len());
            Ok(())
        }
        Command::Eval { predictions, data } => {
            let pred = need(predictions.or(cfg.predictions.clone()), "predictions")?;
            let data = need(data.or(cfg.data.clone()), "data")?;
            require_file(&pred)?;
            require_file(&data)?;
            let (y_hat, w_hat) = read_predictions(File::open(&pred)?)?;
            let truth = load_dataset(&data)?;
            if y_hat.len() != truth.len() {
                bail!("{} has {} rows but {} has {}", pred.display(), y_hat.len(), data.display(), truth.len());
            }
            let mut lines = vec![
                format!("mae: {}", mae(truth.outputs(), &y_hat)?),
                format!("gof: {}", gof(truth.outputs(), &y_hat)?),
            ];
            if let Some(w) = truth.true_weights() {
                if w.n_experts() == w_hat.n_experts() {
                    lines.push(format!("weight_mae: {}", w.mean_abs_diff(&w_hat)));
                }
            }
            emit(out.as_deref(), &lines.join("\n"))
        }
        Command::Sweep { param, values, folds, max_folds, experts, spec, hyper } => {
            let param: SweepParam = need(param.or(cfg.param.clone()), "param")?.parse()?;
            let values = values.or(cfg.values.clone()).unwrap_or_default();
            if values.is_empty() {
                bail!("the value list is empty");
            }
            if let Some(o) = &out {
                require_writable(o)?;
            }
            let mut s = cfg.benchmark()?;
            spec.apply(&mut s);
            s.seed = seed;
            let specs = match experts.or(cfg.experts.clone()) {
                Some(e) => parse_experts(&e)?,
                None => vec![FeatureMap::Linear; s.theta_true.len()],
            };
            let mut h = overlay(&HyperParams::default(), &cfg)?;
            hyper.apply(&mut h);
            let sc = SweepConfig {
                param,
                values,
                folds: folds.or(cfg.folds).unwrap_or(10),
                max_folds: max_folds.or(cfg.max_folds),
                spec: s,
                hyper: h,
                specs,
            };
            let rows = sweep(&sc)?;
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("cell {}={} fold {} failed: {}", param.name(), r.value, r.fold, r.error.as_deref().unwrap_or(""));
            }
            match &out {
                Some(o) => {
                    std::fs::write(o, sweep_csv(&rows))?;
                    println!("value,mean_mae,mean_gof");
                    for (v, m, g) in sweep_summary(&rows) {
                        println!("{v},{m},{g}");
                    }
                }
                None => print!("{}", sweep_csv(&rows)),
            }
            Ok(())
        }
    }
}

fn need<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing --{name} (or `{name}` in the config file)"))
}

fn experts_or_default(names: Option<Vec<String>>) -> Result<Vec<FeatureMap>> {
    match names {
        Some(n) => parse_experts(&n),
        None => Ok(vec![FeatureMap::Linear; 2]),
    }
}

/// `base` with the keys of the config `[hyper]` table written over it.
fn overlay(base: &HyperParams, cfg: &RunConfig) -> Result<HyperParams> {
    let Some(table) = &cfg.hyper else {
        return Ok(base.clone());
    };
    let mut merged = toml::Table::try_from(base).context("encoding hyper-parameters")?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    merged.try_into().context("invalid [hyper] table")
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            let mut f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            writeln!(f, "{text}")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
