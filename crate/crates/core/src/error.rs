use thiserror::Error;

/// Errors raised by dataset construction, fitting and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("infeasible weights: {0}")]
    InfeasibleWeights(String),

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyper(String),

    #[error("normal equations for expert {expert} are rank deficient")]
    RankDeficient { expert: usize },

    #[error("mode {mode} at t={t} is outside 1..={m}")]
    ModeOutOfRange { t: usize, mode: usize, m: usize },

    #[error("unstable recursion at t={t}: |y| = {value:e}")]
    Unstable { t: usize, value: f64 },

    #[error("output is constant; goodness of fit is undefined")]
    ConstantOutput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::RankDeficient { .. } | Self::Unstable { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
