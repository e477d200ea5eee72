//! Fitting convex combinations of experts to time series.
//!
//! A model predicts `y(t)` as `sum_i omega_i(t) f_i(x(t); theta_i)` where the
//! weights `Omega(t)` lie on the probability simplex at every step and each
//! expert is linear in its parameters. Experts and weights are fitted by
//! alternating minimisation of a regularised squared-error cost: an ADMM
//! solve for the experts and a windowed simplex-constrained quadratic
//! program for the weights.

pub mod benchmark;
pub mod error;
pub mod expert_fit;
pub mod inference;
pub mod io;
mod linalg;
pub mod objective;
pub mod trainer;
pub mod types;
pub mod weight_fit;

pub use error::{Error, Result};
pub use expert_fit::{fit_admm, fit_admm_from, fit_separable, AdmmState};
pub use inference::{gate_predict, predict_filtered, predict_recursive, train_gating, Estimate, GatingModel};
pub use objective::{jump_cost, total_cost, LossBreakdown};
pub use trainer::{coordinate_descent, multistart_fit, FitReport, TerminationReason};
pub use types::{
    build_arx_regressors, mixture_predict, validate_weights, Dataset, Expert, FeatureMap, HyperParams, MixtureModel,
    ValidationReport, Violation, WeightSequence, SIMPLEX_TOL,
};
pub use weight_fit::{fit_weights_windowed, project_simplex, solve_weights_pointwise, solve_weights_window};
