use thiserror::Error;

use crate::model::UserId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("missing measurement `{0}`")]
    MissingMeasurement(&'static str),
    #[error("weekday {0} out of range 0..=6")]
    InvalidWeekday(u8),
    #[error("feature mask is empty")]
    EmptyFeatureMask,
    #[error("state index {0} out of range")]
    StateIndexOutOfRange(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("`{0}` must be positive and finite")]
    NonPositive(&'static str),
    #[error("`{0}` is not symmetric positive semi-definite")]
    NotPsd(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("factorization failed for a {size}x{size} system after diagonal jitter {jitter:e}")]
    Factorization { size: usize, jitter: f64 },
    #[error("time-varying kernel needs time_effect_cov and time_lengthscale")]
    MissingTimeEffect,
    #[error("decision index {index} for user {user} does not follow {last}")]
    NonIncreasingDecision { user: UserId, index: u32, last: u32 },
    #[error("non-finite input")]
    NonFinite,
    #[error("forgetting factor {0} outside [0, 1)")]
    InvalidForgetting(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("bound for `{0}` must satisfy 0 < lower < upper")]
    Inverted(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")]
    InvalidClip { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no subset of the context has more than {threshold} records")]
    NoMatch { threshold: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trial seed {seed}, day {day}: {source}")]
    Policy {
        seed: u64,
        day: u32,
        #[source]
        source: PolicyError,
    },
    #[error("invalid trial configuration: {0}")]
    Config(&'static str),
}
