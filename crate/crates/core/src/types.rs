//! Domain types shared across the crate: datasets, experts, weight
//! sequences and hyper-parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::GatingModel;
use crate::objective::LossBreakdown;

/// Absolute tolerance used for every simplex-membership check.
///
/// Entries within this distance of the feasible set are clamped onto it,
/// anything further away is rejected.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Time-ordered regressor/output pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    regressors: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    true_weights: Option<WeightSequence>,
}

impl Dataset {
    pub fn new(regressors: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if regressors.len() != outputs.len() {
            return Err(Error::LengthMismatch {
                what: "regressors vs outputs",
                expected: outputs.len(),
                got: regressors.len(),
            });
        }
        let nx = regressors[0].len();
        if let Some(bad) = regressors.iter().find(|x| x.len() != nx) {
            return Err(Error::DimensionMismatch {
                what: "regressor",
                expected: nx,
                got: bad.len(),
            });
        }
        Ok(Self {
            regressors,
            outputs,
            true_weights: None,
        })
    }

    /// Attaches ground-truth weights (benchmark data only).
    pub fn with_true_weights(mut self, weights: WeightSequence) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "true weights",
                expected: self.len(),
                got: weights.len(),
            });
        }
        self.true_weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.regressors[0].len()
    }

    pub fn regressors(&self) -> &[Vec<f64>] {
        &self.regressors
    }

    pub fn regressor(&self, t: usize) -> &[f64] {
        &self.regressors[t]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn true_weights(&self) -> Option<&WeightSequence> {
        self.true_weights.as_ref()
    }

    /// Copies the rows selected by `idx` (in the given order).
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let regressors = idx.iter().map(|&t| self.regressors[t].clone()).collect();
        let outputs = idx.iter().map(|&t| self.outputs[t]).collect();
        let mut out = Self::new(regressors, outputs)?;
        if let Some(w) = &self.true_weights {
            let rows = idx.iter().map(|&t| w.row(t).to_vec()).collect();
            out.true_weights = Some(WeightSequence::from_rows(rows)?);
        }
        Ok(out)
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Builds ARX regressors `[y(t-1)..y(t-ny), u(t-1)..u(t-nu)]`.
///
/// Rows lacking a full history are dropped, so the result has
/// `len - max(ny, nu)` samples.
pub fn build_arx_regressors(outputs: &[f64], inputs: &[f64], ny: usize, nu: usize) -> Result<Dataset> {
    if outputs.is_empty() || inputs.is_empty() {
        return Err(Error::Empty("ARX sequences"));
    }
    if outputs.len() != inputs.len() {
        return Err(Error::LengthMismatch {
            what: "ARX inputs vs outputs",
            expected: outputs.len(),
            got: inputs.len(),
        });
    }
    if ny + nu == 0 {
        return Err(Error::InvalidArgument("ny + nu must be at least 1".into()));
    }
    let lag = ny.max(nu);
    if outputs.len() <= lag {
        return Err(Error::Empty("ARX regressors (sequence shorter than the lag)"));
    }
    let mut regressors = Vec::with_capacity(outputs.len() - lag);
    let mut ys = Vec::with_capacity(outputs.len() - lag);
    for t in lag..outputs.len() {
        let mut x = Vec::with_capacity(ny + nu);
        x.extend((1..=ny).map(|k| outputs[t - k]));
        x.extend((1..=nu).map(|k| inputs[t - k]));
        regressors.push(x);
        ys.push(outputs[t]);
    }
    Dataset::new(regressors, ys)
}

/// Deterministic feature map of a linear-in-parameters expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `phi(x) = x`.
    Linear,
    /// All monomials of total degree `<= degree`.
    ///
    /// Ordering: exponent tuples `(a_1, .., a_n)` sorted in ascending
    /// lexicographic order, which puts the constant term first. For two
    /// inputs and degree 2 this is `1, x2, x2^2, x1, x1*x2, x1^2`.
    Polynomial { degree: u32 },
}

impl FeatureMap {
    /// Exponent tuples in emission order.
    pub fn exponents(&self, n_x: usize) -> Vec<Vec<u32>> {
        match *self {
            FeatureMap::Linear => (0..n_x)
                .map(|i| {
                    let mut e = vec![0; n_x];
                    e[i] = 1;
                    e
                })
                .collect(),
            FeatureMap::Polynomial { degree } => {
                let mut out = Vec::new();
                let mut cur = vec![0u32; n_x];
                monomials(&mut cur, 0, degree, &mut out);
                out
            }
        }
    }

    pub fn dim(&self, n_x: usize) -> usize {
        match *self {
            FeatureMap::Linear => n_x,
            FeatureMap::Polynomial { .. } => self.exponents(n_x).len(),
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            FeatureMap::Linear => x.to_vec(),
            FeatureMap::Polynomial { .. } => self
                .exponents(x.len())
                .iter()
                .map(|e| {
                    e.iter()
                        .zip(x)
                        .fold(1.0, |acc, (&p, &xi)| acc * xi.powi(p as i32))
                })
                .collect(),
        }
    }

    /// Human-readable feature names, e.g. `x1*x2^2`.
    pub fn feature_names(&self, n_x: usize) -> Vec<String> {
        self.exponents(n_x)
            .iter()
            .map(|e| {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, &p)| {
                        if p == 1 {
                            format!("x{}", i + 1)
                        } else {
                            format!("x{}^{}", i + 1, p)
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            })
            .collect()
    }
}

fn monomials(cur: &mut Vec<u32>, pos: usize, budget: u32, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for p in 0..=budget {
        cur[pos] = p;
        monomials(cur, pos + 1, budget - p, out);
    }
    cur[pos] = 0;
}

impl std::str::FromStr for FeatureMap {
    type Err = Error;

    /// `linear`, or `poly<d>` for the full polynomial of degree `d`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(Self::Linear);
        }
        s.strip_prefix("poly")
            .and_then(|d| d.parse::<u32>().ok())
            .filter(|&d| d >= 1)
            .map(|degree| Self::Polynomial { degree })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown expert '{s}' (expected linear or poly<d>)")))
    }
}

impl std::fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Linear => f.write_str("linear"),
            Self::Polynomial { degree } => write!(f, "poly{degree}"),
        }
    }
}

/// A local model `f(x) = phi(x) . theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub map: FeatureMap,
    pub params: Vec<f64>,
}

impl Expert {
    pub fn new(map: FeatureMap, params: Vec<f64>) -> Self {
        Self { map, params }
    }

    pub fn zeros(map: FeatureMap, n_x: usize) -> Self {
        Self::new(map, vec![0.0; map.dim(n_x)])
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let phi = self.map.features(x);
        if phi.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "expert features",
                expected: self.params.len(),
                got: phi.len(),
            });
        }
        Ok(dot(&phi, &self.params))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stacked expert predictions: `T x M`, row-major.
pub fn expert_predictions(dataset: &Dataset, experts: &[Expert]) -> Result<Vec<f64>> {
    let m = experts.len();
    let mut out = vec![0.0; dataset.len() * m];
    for (t, x) in dataset.regressors().iter().enumerate() {
        for (i, e) in experts.iter().enumerate() {
            out[t * m + i] = e.predict(x)?;
        }
    }
    Ok(out)
}

/// Convex combination of expert predictions at a single regressor.
pub fn mixture_predict(experts: &[Expert], omega: &[f64], x: &[f64]) -> Result<f64> {
    if experts.is_empty() {
        return Err(Error::Empty("experts"));
    }
    if omega.len() != experts.len() {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: experts.len(),
            got: omega.len(),
        });
    }
    check_simplex_row(omega).map_err(|v| Error::InfeasibleWeights(v.to_string()))?;
    let mut acc = 0.0;
    for (e, w) in experts.iter().zip(omega) {
        acc += w * e.predict(x)?;
    }
    Ok(acc)
}

/// A single simplex violation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `omega_i(t)` outside `[0, 1]`; `excess` is the distance to the interval.
    Bound { t: usize, i: usize, value: f64, excess: f64 },
    /// Row sum differs from one by `excess`.
    RowSum { t: usize, sum: f64, excess: f64 },
    /// Entry is NaN or infinite.
    NonFinite { t: usize, i: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Bound { t, i, value, excess } => {
                write!(f, "omega[{t}][{i}] = {value} is outside [0, 1] by {excess:e}")
            }
            Violation::RowSum { t, sum, excess } => {
                write!(f, "row {t} sums to {sum} (off by {excess:e})")
            }
            Violation::NonFinite { t, i } => write!(f, "omega[{t}][{i}] is not finite"),
        }
    }
}

/// Outcome of [`validate_weights`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

fn row_violations(t: usize, row: &[f64], out: &mut Vec<Violation>) {
    let mut sum = 0.0;
    for (i, &w) in row.iter().enumerate() {
        if !w.is_finite() {
            out.push(Violation::NonFinite { t, i });
            return;
        }
        let excess = if w < 0.0 { -w } else if w > 1.0 { w - 1.0 } else { 0.0 };
        if excess > SIMPLEX_TOL {
            out.push(Violation::Bound { t, i, value: w, excess });
        }
        sum += w;
    }
    let excess = (sum - 1.0).abs();
    if excess > SIMPLEX_TOL {
        out.push(Violation::RowSum { t, sum, excess });
    }
}

fn check_simplex_row(row: &[f64]) -> std::result::Result<(), Violation> {
    let mut v = Vec::new();
    row_violations(0, row, &mut v);
    match v.into_iter().next() {
        None => Ok(()),
        Some(x) => Err(x),
    }
}

/// Checks every row of a raw `T x M` weight table against the simplex.
pub fn validate_weights(rows: &[Vec<f64>]) -> ValidationReport {
    let mut violations = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        row_violations(t, row, &mut violations);
    }
    ValidationReport { violations }
}

/// Per-time-step simplex weights, stored `T x M` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    m: usize,
    data: Vec<f64>,
}

impl WeightSequence {
    /// Validates and clamps rows within [`SIMPLEX_TOL`] onto the simplex.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("weight sequence"));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::Empty("weight row"));
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "weight row",
                    expected: m,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(m, data)
    }

    pub fn from_flat(m: usize, mut data: Vec<f64>) -> Result<Self> {
        if m == 0 || data.is_empty() || !data.len().is_multiple_of(m) {
            return Err(Error::InvalidArgument(format!(
                "flat weight buffer of length {} is not a multiple of M={m}",
                data.len()
            )));
        }
        let mut violations = Vec::new();
        for (t, row) in data.chunks(m).enumerate() {
            row_violations(t, row, &mut violations);
            if !violations.is_empty() {
                return Err(Error::InfeasibleWeights(violations[0].to_string()));
            }
        }
        for row in data.chunks_mut(m) {
            clamp_row(row);
        }
        Ok(Self { m, data })
    }

    pub fn constant(t: usize, row: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(t * row.len());
        for _ in 0..t {
            data.extend_from_slice(row);
        }
        Self::from_flat(row.len(), data)
    }

    pub fn uniform(t: usize, m: usize) -> Self {
        Self {
            m,
            data: vec![1.0 / m as f64; t * m],
        }
    }

    /// One-hot rows from a 1-based mode sequence.
    pub fn one_hot(modes: &[usize], m: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Empty("mode sequence"));
        }
        let mut data = vec![0.0; modes.len() * m];
        for (t, &s) in modes.iter().enumerate() {
            if s == 0 || s > m {
                return Err(Error::ModeOutOfRange { t, mode: s, m });
            }
            data[t * m + s - 1] = 1.0;
        }
        Ok(Self { m, data })
    }

    pub(crate) fn from_flat_unchecked(m: usize, data: Vec<f64>) -> Self {
        debug_assert!(validate_weights(&data.chunks(m).map(|r| r.to_vec()).collect::<Vec<_>>()).is_ok());
        Self { m, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_experts(&self) -> usize {
        self.m
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.m..(t + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.m)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (t, row) in self.rows().enumerate() {
            row_violations(t, row, &mut violations);
        }
        ValidationReport { violations }
    }

    /// Euclidean distance between two sequences of equal shape.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Mean absolute entry-wise difference.
    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }
}

fn clamp_row(row: &mut [f64]) {
    for w in row.iter_mut() {
        *w = w.clamp(0.0, 1.0);
    }
    // Sums within rounding of one are left alone so that clamping is idempotent.
    let s: f64 = row.iter().sum();
    if s > 0.0 && (s - 1.0).abs() > row.len() as f64 * f64::EPSILON {
        for w in row.iter_mut() {
            *w /= s;
        }
    }
}

/// Tunables of the alternating fit and its inner solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Weight of the per-expert local loss relative to the mixture loss.
    pub beta: f64,
    /// Ridge penalty on every parameter vector.
    pub lambda_theta: f64,
    /// Weight-smoothness penalty.
    pub eta: f64,
    /// ADMM penalty.
    pub rho: f64,
    /// Mixture-loss coefficient.
    pub c: f64,
    /// Local-loss coefficients, one per expert. Empty means all ones.
    pub c_local: Vec<f64>,
    /// Window length of the weight step.
    pub window: usize,
    pub eps_theta: f64,
    pub eps_omega: f64,
    pub eps_j: f64,
    pub k_max: usize,
    pub j_max: usize,
    /// Residual threshold for early ADMM termination.
    pub admm_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// History cap for filtered inference.
    pub filter_horizon: usize,
    /// Neighbour count of the gating model.
    pub gating_k: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta: 1e-6,
            lambda_theta: 5e-3,
            eta: 50.0,
            rho: 1e-9,
            c: 1.0,
            c_local: Vec::new(),
            window: 100,
            eps_theta: 1e-6,
            eps_omega: 1e-6,
            eps_j: 1e-9,
            k_max: 70,
            j_max: 120,
            admm_tol: 1e-8,
            n_restarts: 5,
            seed: 0,
            filter_horizon: 50,
            gating_k: 5,
        }
    }
}

impl HyperParams {
    /// Local-loss coefficient of expert `i`.
    pub fn c_i(&self, i: usize) -> f64 {
        self.c_local.get(i).copied().unwrap_or(1.0)
    }

    /// Checks every bound; `m` is the expert count.
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyper(msg));
        if m == 0 {
            return bad("at least one expert is required".into());
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda_theta", self.lambda_theta),
            ("eta", self.eta),
            ("c", self.c),
            ("eps_theta", self.eps_theta),
            ("eps_omega", self.eps_omega),
            ("eps_j", self.eps_j),
            ("admm_tol", self.admm_tol),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !self.c_local.is_empty() && self.c_local.len() != m {
            return bad(format!(
                "c_local has {} entries for {m} experts",
                self.c_local.len()
            ));
        }
        if let Some(ci) = self.c_local.iter().find(|&&v| !(v > 0.0)) {
            return bad(format!("c_local entries must be positive, got {ci}"));
        }
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if self.j_max == 0 {
            return bad("j_max must be at least 1".into());
        }
        if self.n_restarts == 0 {
            return bad("n_restarts must be at least 1".into());
        }
        if self.gating_k == 0 {
            return bad("gating_k must be at least 1".into());
        }
        if self.filter_horizon == 0 {
            return bad("filter_horizon must be at least 1".into());
        }
        Ok(())
    }
}

/// Fitted experts together with their training weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub experts: Vec<Expert>,
    pub train_weights: WeightSequence,
    pub gating: Option<GatingModel>,
    pub hyper: HyperParams,
    pub cost_trace: Vec<LossBreakdown>,
}

impl MixtureModel {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn predict(&self, omega: &[f64], x: &[f64]) -> Result<f64> {
        mixture_predict(&self.experts, omega, x)
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.cost_trace.last().map(|c| c.total)
    }
}
