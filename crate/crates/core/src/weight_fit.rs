//! Weight update (the `Omega` step of the alternation).
//!
//! With the experts fixed, the cost is a convex quadratic in the weights
//! subject to one simplex constraint per time step. Without the shaper
//! (`eta = 0`) it separates over time; otherwise it is solved over
//! overlapping windows of length `W` that share one time step, each window
//! anchored to the rows on either side of it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objective::c_list;
use crate::types::{dot, expert_predictions, Dataset, Expert, HyperParams, WeightSequence};

const PG_TOL: f64 = 1e-8;
const PG_MAX_ITER: usize = 5000;
const MIN_STEP: f64 = 1e-300;

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("vector to project"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("cannot project a non-finite vector".into()));
    }
    let mut out = vec![0.0; v.len()];
    project_into(v, &mut out);
    Ok(out)
}

fn project_into(v: &[f64], out: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - theta).max(0.0);
    }
    // Restore an exact unit sum lost to rounding.
    let s: f64 = out.iter().sum();
    if s > 0.0 && (s - 1.0).abs() > 0.0 {
        let (imax, _) = out
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        out[imax] = (out[imax] + 1.0 - s).max(0.0);
    }
}

/// Consecutive windows `[start, end]` (inclusive, 0-based) with a one-step overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub len: usize,
    pub horizon: usize,
}

impl WindowPlan {
    pub fn new(horizon: usize, len: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Empty("window horizon"));
        }
        if len < 2 {
            return Err(Error::InvalidHyper(format!("window length must be at least 2, got {len}")));
        }
        let mut starts = vec![0];
        let mut tau = 0;
        while tau + len < horizon {
            tau += len - 1;
            starts.push(tau);
        }
        Ok(Self { starts, len, horizon })
    }

    pub fn windows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts
            .iter()
            .map(|&s| (s, (s + self.len - 1).min(self.horizon - 1)))
    }
}

/// Outcome of one window solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    /// Row-major weights of the slice.
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weight subproblem over a contiguous block of rows.
pub(crate) struct WindowProblem<'a> {
    m: usize,
    y: &'a [f64],
    /// Row-major expert predictions.
    preds: &'a [f64],
    /// Linear coefficients `beta c_i (y - f_i)^2`, row-major.
    lin: Vec<f64>,
    c: f64,
    eta: f64,
    left: Option<&'a [f64]>,
    right: Option<&'a [f64]>,
}

impl<'a> WindowProblem<'a> {
    pub(crate) fn new(
        y: &'a [f64],
        preds: &'a [f64],
        m: usize,
        hyper: &HyperParams,
        cl: &[f64],
        left: Option<&'a [f64]>,
        right: Option<&'a [f64]>,
    ) -> Self {
        let lin = preds
            .chunks(m)
            .zip(y)
            .flat_map(|(f, &y)| {
                f.iter()
                    .zip(cl)
                    .map(move |(fi, ci)| hyper.beta * ci * (y - fi) * (y - fi))
            })
            .collect();
        Self {
            m,
            y,
            preds,
            lin,
            c: hyper.c,
            eta: hyper.eta,
            left,
            right,
        }
    }

    fn rows(&self) -> usize {
        self.y.len()
    }

    pub(crate) fn objective(&self, w: &[f64]) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for (t, row) in w.chunks(m).enumerate() {
            let f = &self.preds[t * m..(t + 1) * m];
            let r = self.y[t] - dot(row, f);
            acc += self.c * r * r + dot(row, &self.lin[t * m..(t + 1) * m]);
        }
        if self.eta != 0.0 {
            acc += self.eta * self.transitions(w);
        }
        acc
    }

    fn transitions(&self, w: &[f64]) -> f64 {
        let m = self.m;
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let n = self.rows();
        let mut acc = 0.0;
        if let Some(l) = self.left {
            acc += sq(&w[..m], l);
        }
        for t in 1..n {
            acc += sq(&w[t * m..(t + 1) * m], &w[(t - 1) * m..t * m]);
        }
        if let Some(r) = self.right {
            acc += sq(&w[(n - 1) * m..], r);
        }
        acc
    }

    fn gradient(&self, w: &[f64], g: &mut [f64]) {
        let m = self.m;
        let n = self.rows();
        for t in 0..n {
            let row = &w[t * m..(t + 1) * m];
            let f = &self.preds[t * m..(t + 1) * m];
            let r = self.y[t] - dot(row, f);
            for i in 0..m {
                g[t * m + i] = -2.0 * self.c * r * f[i] + self.lin[t * m + i];
            }
        }
        if self.eta == 0.0 {
            return;
        }
        let e2 = 2.0 * self.eta;
        for t in 0..n {
            for i in 0..m {
                let cur = w[t * m + i];
                let prev = if t > 0 { Some(w[(t - 1) * m + i]) } else { self.left.map(|l| l[i]) };
                let next = if t + 1 < n { Some(w[(t + 1) * m + i]) } else { self.right.map(|r| r[i]) };
                if let Some(p) = prev {
                    g[t * m + i] += e2 * (cur - p);
                }
                if let Some(q) = next {
                    g[t * m + i] += e2 * (cur - q);
                }
            }
        }
    }

    fn project(&self, v: &[f64], out: &mut [f64]) {
        for (src, dst) in v.chunks(self.m).zip(out.chunks_mut(self.m)) {
            project_into(src, dst);
        }
    }

    /// `d^T H d` for the Hessian `H` of the objective.
    fn curvature(&self, d: &[f64]) -> f64 {
        let m = self.m;
        let n = self.rows();
        let mut acc = 0.0;
        for t in 0..n {
            let fd = dot(&self.preds[t * m..(t + 1) * m], &d[t * m..(t + 1) * m]);
            acc += 2.0 * self.c * fd * fd;
        }
        if self.eta != 0.0 {
            let sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
            let mut tr = 0.0;
            if self.left.is_some() {
                tr += sq(&d[..m]);
            }
            for t in 1..n {
                tr += d[t * m..(t + 1) * m]
                    .iter()
                    .zip(&d[(t - 1) * m..t * m])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            if self.right.is_some() {
                tr += sq(&d[(n - 1) * m..]);
            }
            acc += 2.0 * self.eta * tr;
        }
        acc
    }

    /// `F(b) - F(a)` evaluated without cancellation: `g_a . e + e^T H e / 2`
    /// with `e = b - a` and the gradient centred per row, which is exact
    /// for feasible `a` and `b` because each row of `e` sums to zero.
    fn change(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = self.m;
        let mut g = vec![0.0; a.len()];
        self.gradient(a, &mut g);
        let e: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
        let mut lin = 0.0;
        for (gr, er) in g.chunks(m).zip(e.chunks(m)) {
            let mean = gr.iter().sum::<f64>() / m as f64;
            lin += gr.iter().zip(er).map(|(gi, ei)| (gi - mean) * ei).sum::<f64>();
        }
        lin + 0.5 * self.curvature(&e)
    }

    /// Accelerated projected gradient with Armijo backtracking and
    /// gradient-based momentum restart, started at `init`. The result is
    /// never worse than `init`.
    pub(crate) fn solve(&self, init: &[f64]) -> WindowSolution {
        let len = init.len();
        let mut x = init.to_vec();
        let mut x_prev = x.clone();
        let mut y = x.clone();
        let mut tk = 1.0f64;
        let mut step = 1.0f64;
        let mut g = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut d = vec![0.0; len];
        let mut trial = vec![0.0; len];
        let mut converged = false;
        let mut iterations = 0;

        while iterations < PG_MAX_ITER {
            iterations += 1;
            self.gradient(&y, &mut g);
            let dd = loop {
                for k in 0..len {
                    trial[k] = y[k] - step * g[k];
                }
                self.project(&trial, &mut z);
                for k in 0..len {
                    d[k] = z[k] - y[k];
                }
                let dd: f64 = d.iter().map(|v| v * v).sum();
                if self.curvature(&d) * step <= dd || step < MIN_STEP {
                    break dd;
                }
                step *= 0.5;
            };
            x_prev.copy_from_slice(&x);
            x.copy_from_slice(&z);
            if dd.sqrt() / step < PG_TOL {
                converged = true;
                break;
            }
            let restart = d.iter().zip(&x).zip(&x_prev).map(|((a, b), c)| a * (b - c)).sum::<f64>() < 0.0;
            if restart {
                tk = 1.0;
                y.copy_from_slice(&x);
            } else {
                let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
                for k in 0..len {
                    y[k] = x[k] + ((tk - 1.0) / tn) * (x[k] - x_prev[k]);
                }
                tk = tn;
            }
        }
        if self.change(init, &x) > 0.0 {
            x.copy_from_slice(init);
        }
        WindowSolution {
            objective: self.objective(&x),
            weights: x,
            iterations,
            converged,
        }
    }
}

fn uniform_rows(n: usize, m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; n * m]
}

fn check_experts(dataset: &Dataset, experts: &[Expert]) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::Empty("experts"));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    Ok(())
}

/// Per-step weights with no shaper: each row minimises its own step loss,
/// starting from the uniform vector.
pub fn solve_weights_pointwise(dataset: &Dataset, experts: &[Expert], hyper: &HyperParams) -> Result<WeightSequence> {
    check_experts(dataset, experts)?;
    let m = experts.len();
    hyper.validate(m)?;
    let preds = expert_predictions(dataset, experts)?;
    Ok(WeightSequence::from_flat_unchecked(m, pointwise_from_preds(dataset.outputs(), &preds, m, hyper)))
}

fn pointwise_from_preds(y: &[f64], preds: &[f64], m: usize, hyper: &HyperParams) -> Vec<f64> {
    let cl = c_list(hyper, m);
    let h = HyperParams { eta: 0.0, ..hyper.clone() };
    let rows: Vec<Vec<f64>> = (0..y.len())
        .into_par_iter()
        .map(|t| {
            let p = WindowProblem::new(&y[t..t + 1], &preds[t * m..(t + 1) * m], m, &h, &cl, None, None);
            let sol = p.solve(&uniform_rows(1, m));
            if !sol.converged {
                log::warn!("pointwise weight solve at t={t} stopped at the iteration cap");
            }
            sol.weights
        })
        .collect();
    rows.concat()
}

/// Weights over a slice with optional fixed boundary rows.
///
/// `left` is the row preceding the slice and `right` the row following it;
/// each contributes one transition term. With `eta = 0` the rows decouple
/// and the result equals [`solve_weights_pointwise`] on the slice.
pub fn solve_weights_window_anchored(
    slice: &Dataset,
    experts: &[Expert],
    init: &WeightSequence,
    left: Option<&[f64]>,
    right: Option<&[f64]>,
    hyper: &HyperParams,
) -> Result<WindowSolution> {
    check_experts(slice, experts)?;
    let m = experts.len();
    hyper.validate(m)?;
    if init.len() != slice.len() {
        return Err(Error::LengthMismatch {
            what: "window initial weights",
            expected: slice.len(),
            got: init.len(),
        });
    }
    if init.n_experts() != m {
        return Err(Error::DimensionMismatch {
            what: "window initial weights",
            expected: m,
            got: init.n_experts(),
        });
    }
    for a in [left, right].into_iter().flatten() {
        if a.len() != m {
            return Err(Error::DimensionMismatch {
                what: "anchor row",
                expected: m,
                got: a.len(),
            });
        }
        let report = crate::types::validate_weights(&[a.to_vec()]);
        if let Some(v) = report.first() {
            return Err(Error::InfeasibleWeights(v.to_string()));
        }
    }
    let preds = expert_predictions(slice, experts)?;
    let cl = c_list(hyper, m);
    if hyper.eta == 0.0 {
        let weights = pointwise_from_preds(slice.outputs(), &preds, m, hyper);
        let p = WindowProblem::new(slice.outputs(), &preds, m, hyper, &cl, None, None);
        return Ok(WindowSolution {
            objective: p.objective(&weights),
            weights,
            iterations: 0,
            converged: true,
        });
    }
    let p = WindowProblem::new(slice.outputs(), &preds, m, hyper, &cl, left, right);
    Ok(p.solve(init.as_flat()))
}

/// Weights over a slice anchored on the left by the previous window's row.
pub fn solve_weights_window(
    slice: &Dataset,
    experts: &[Expert],
    init: &WeightSequence,
    anchor: Option<&[f64]>,
    hyper: &HyperParams,
) -> Result<WindowSolution> {
    solve_weights_window_anchored(slice, experts, init, anchor, None, hyper)
}

/// Windowed weight update warm-started from `omega_prev`.
///
/// Windows are processed left to right. Each window is anchored on the left
/// to the freshly computed row before it and on the right to the row of
/// `omega_prev` after it; the shared row of two windows takes the value from
/// the later window. Every window solve is a block-coordinate descent step on
/// the weight part of the cost, so the cost never increases.
pub fn fit_weights_windowed(
    dataset: &Dataset,
    experts: &[Expert],
    omega_prev: &WeightSequence,
    hyper: &HyperParams,
) -> Result<WeightSequence> {
    check_experts(dataset, experts)?;
    let m = experts.len();
    hyper.validate(m)?;
    if omega_prev.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            what: "previous weights vs dataset",
            expected: dataset.len(),
            got: omega_prev.len(),
        });
    }
    if omega_prev.n_experts() != m {
        return Err(Error::DimensionMismatch {
            what: "previous weights vs experts",
            expected: m,
            got: omega_prev.n_experts(),
        });
    }
    let preds = expert_predictions(dataset, experts)?;
    let y = dataset.outputs();
    if hyper.eta == 0.0 {
        return Ok(WeightSequence::from_flat_unchecked(m, pointwise_from_preds(y, &preds, m, hyper)));
    }
    let plan = WindowPlan::new(dataset.len(), hyper.window)?;
    let cl = c_list(hyper, m);
    let mut out = omega_prev.as_flat().to_vec();
    let mut unconverged = 0usize;
    for (s, e) in plan.windows() {
        let left = (s > 0).then(|| out[(s - 1) * m..s * m].to_vec());
        let right = (e + 1 < dataset.len()).then(|| omega_prev.row(e + 1).to_vec());
        let p = WindowProblem::new(
            &y[s..=e],
            &preds[s * m..(e + 1) * m],
            m,
            hyper,
            &cl,
            left.as_deref(),
            right.as_deref(),
        );
        let sol = p.solve(&out[s * m..(e + 1) * m]);
        if !sol.converged {
            unconverged += 1;
        }
        out[s * m..(e + 1) * m].copy_from_slice(&sol.weights);
    }
    if unconverged > 0 {
        log::warn!(
            "{unconverged} of {} weight windows stopped at the iteration cap",
            plan.starts.len()
        );
    }
    Ok(WeightSequence::from_flat_unchecked(m, out))
}

/// Weight part of the cost: step losses plus shaper, for fixed experts.
pub fn weight_objective(dataset: &Dataset, experts: &[Expert], weights: &WeightSequence, hyper: &HyperParams) -> Result<f64> {
    let m = experts.len();
    let preds = expert_predictions(dataset, experts)?;
    let cl = c_list(hyper, m);
    let p = WindowProblem::new(dataset.outputs(), &preds, m, hyper, &cl, None, None);
    Ok(p.objective(weights.as_flat()))
}
