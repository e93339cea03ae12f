use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure of the dual root-finding in the weight solver.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("non-finite coefficient at model {model}, index {index}")]
    NonFiniteCoefficient { model: usize, index: usize },
    #[error(
        "bisection bracket failure on beta: residual({lo:.3e}) = {f_lo:.3e}, residual({hi:.3e}) = {f_hi:.3e}"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("newton/bisection for lambda did not converge (model {model}, beta = {beta:.3e})")]
    Lambda { model: usize, beta: f64 },
    #[error("invalid level alpha = {0}; expected 0 < alpha < 1")]
    Alpha(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample too small: model {model} has {n} observation(s), at least 2 required")]
    SampleTooSmall { model: usize, n: usize },
    #[error(
        "model/dataset arity mismatch: model expects {expected} input models, dataset has {found}"
    )]
    ArityMismatch { expected: usize, found: usize },
    #[error("dimension mismatch in model {model}: observation {index} has {found} components, expected {expected}")]
    DimensionMismatch {
        model: usize,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite observation in model {model} at index {index}")]
    NonFiniteObservation { model: usize, index: usize },
    #[error("invalid observation in model {model} at index {index}: {reason}")]
    InvalidObservation {
        model: usize,
        index: usize,
        reason: String,
    },
    #[error("empty dataset: at least one input model is required")]
    EmptyDataset,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("performance model returned non-finite value {value} at replication {replication}")]
    NonFiniteOutput { replication: usize, value: f64 },
    #[error("performance model rejected its inputs at replication {replication}: {reason}")]
    ModelRejected { replication: usize, reason: String },
    #[error("B too small for requested level: B = {b}, alpha = {alpha}; use B >= {min_b}")]
    BootstrapTooSmall { b: usize, alpha: f64, min_b: usize },
    #[error("unknown preset '{name}'; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("invalid network: {0}")]
    Graph(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl Error {
    /// True for failures caused by the numerical solver rather than by bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
