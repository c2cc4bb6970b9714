use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot aggregate an empty set of updates")]
    EmptyAggregation,

    #[error("evaluation set is empty")]
    EmptyTestSet,

    #[error("average energy must be positive, got {0}")]
    NonPositiveEnergyAverage(f64),

    #[error("cannot sample {k} clients from a population of {n}")]
    SampleTooLarge { k: usize, n: usize },

    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid scenario ({} violation(s)): {}", .0.len(), join_violations(.0))]
    InvalidScenario(Vec<Violation>),

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
