use thiserror::Error;

use crate::index::MultiIndex;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum RnfError {
    #[error("malformed multi-index: {0}")]
    MalformedIndex(String),

    #[error("enumeration budget exceeded: projected {projected} > cap {cap}")]
    ResourceBudget { projected: u128, cap: u128 },

    #[error("state is not real: |eta - conj(xi)| = {0:e} at a = {1}")]
    NotReal(f64, i64),

    #[error("norm budget violated: {norm} >= {budget}")]
    NormBudget { norm: f64, budget: f64 },

    #[error("denominator {value:e} for {index} is below floor {floor:e}")]
    DenominatorFloor { index: MultiIndex, value: f64, floor: f64 },

    #[error("blow-up: norm grew from {initial:e} to {current:e} at t = {t}")]
    BlowUp { initial: f64, current: f64, t: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("gradient unavailable: {0}")]
    GradientUnavailable(String),

    #[error("not solvable: {0}")]
    NotSolvable(String),

    #[error("subclass violation: {0}")]
    Subclass(String),

    #[error("no derivative distribution: {0}")]
    NoMatching(String),

    #[error("certificate failure: {0}")]
    Certificate(String),

    #[error("internal contradiction: {0}")]
    Contradiction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing field: {0}")]
    MissingField(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RnfError>;
