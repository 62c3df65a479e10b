use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("horizon T must be at least 1")]
    EmptyHorizon,

    #[error("{name} has length {len}, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        len: usize,
        expected: usize,
    },

    #[error("{name}({index}) must be > 0, got {value}")]
    NonPositive {
        name: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{name}({index}) must be >= 0, got {value}")]
    Negative {
        name: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{name}({index}) must be finite, got {value}")]
    NonFinite {
        name: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{name} must be >= 0 and finite, got {value}")]
    InvalidScalar { name: &'static str, value: f64 },

    #[error("error variance must be >= 0, got {0}")]
    NegativeVariance(f64),

    #[error("noise covariance [[V_ww, V_wv], [V_wv, V_vv]] is not positive semidefinite at step {step}")]
    NotPsd { step: usize },

    #[error("regime {regime} requires {requirement}")]
    RegimeMismatch {
        regime: &'static str,
        requirement: &'static str,
    },

    #[error("stationarity analysis needs a constant schedule, but {name} varies over time")]
    NonConstant { name: &'static str },

    #[error("oracle horizon {horizon} exceeds the maximum of {max}")]
    HorizonTooLarge { horizon: usize, max: usize },

    #[error("perturbation step {step} is outside the transmission window 1..{horizon}")]
    PerturbationStep { step: usize, horizon: usize },

    #[error("Monte Carlo needs at least one trial")]
    NoTrials,
}
