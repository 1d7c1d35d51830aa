//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite state encountered at integration step {step}")]
    IntegrationBlowup { step: usize },
    #[error("negative population encountered at step {step}; reduce the step size")]
    StepSize { step: usize },
    #[error("noise calibration impossible: {0}")]
    CalibrationImpossible(String),
    #[error("noise level metric undefined: clean field has zero norm")]
    UndefinedMetric,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid grid field: {0}")]
    InvalidField(String),
    #[error("ill-conditioned local polynomial fit (axis {axis}, node {node})")]
    IllConditionedWindow { axis: usize, node: usize },
    #[error("equation generation exhausted after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("token cannot be evaluated: {0}")]
    UnevaluableToken(String),
    #[error("ill-posed coefficient fit: condition number {cond:.3e}")]
    IllPosedFit { cond: f64 },
    #[error("all candidate terms deactivated by the sparsity stage")]
    TrivialEquation,
    #[error("equation is not explicitly solvable: {0}")]
    NotSolvable(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
