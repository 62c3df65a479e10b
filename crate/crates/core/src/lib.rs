//! Linear encoder/decoder filters for sending the state of a scalar
//! Gauss-Markov source over an AWGN channel with noisy, noiseless or absent
//! feedback.
//!
//! ```
//! use fbcomm::{predict, RegimeKind, ResidualRecursion, SystemSchedule};
//!
//! // a = 0.5, b = 1, P = 1, N = 1, N_f = 0, V_xx0 = 1 over 60 steps
//! let s = SystemSchedule::constant(60, 0.5, 1.0, 1.0, 1.0, 0.0, 1.0)?;
//! let pred = predict(RegimeKind::NoiselessFeedback, &s, None, ResidualRecursion::default())?;
//! assert!((pred.last_mse() - 8.0 / 7.0).abs() < 1e-12);
//! # Ok::<(), fbcomm::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod model;
pub mod recursions;
pub mod schemes;
pub mod simulate;
pub mod stationarity;

pub use error::{Error, Result};
pub use model::{
    validate_schedule, Cov2, MeasurementModel, MeasurementSpec, Param, ScheduleSpec, SchemeState,
    StepParams, SystemSchedule, TrajectoryRecord, VariancePrediction,
};
pub use recursions::ResidualRecursion;
pub use schemes::{predict, run_regime, NoiseStreams, PreparedScheme, RegimeKind};
