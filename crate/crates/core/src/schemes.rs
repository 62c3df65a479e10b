//! Realizable encoder/decoder filters driven by sampled noise.
//!
//! Within a step the encoder observes its new state input, receives the
//! feedback `y_f(t)` of the previous transmission, updates its memory, and
//! then transmits. Encoder and decoder take `sigma_t` from the deterministic
//! recursions; nothing is estimated online.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeasurementModel, SchemeState, StepParams, SystemSchedule, TrajectoryRecord, VariancePrediction};
use crate::recursions::{self, gains, KalmanPrefilter, ResidualRecursion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Noisy feedback of the receiver output, `phi = y`.
    OutputFeedback,
    /// `N_f = +inf`.
    NoFeedback,
    /// `N_f = 0`, `phi = y`.
    NoiselessFeedback,
    /// Noisy feedback of the receiver estimate, `phi = xhat`.
    StateEstimateFeedback,
    /// Output feedback where the transmitter measures `gamma = c x + d v`.
    SeparationOutputFeedback,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 5] = [
        RegimeKind::OutputFeedback,
        RegimeKind::NoFeedback,
        RegimeKind::NoiselessFeedback,
        RegimeKind::StateEstimateFeedback,
        RegimeKind::SeparationOutputFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::OutputFeedback => "output_feedback",
            RegimeKind::NoFeedback => "no_feedback",
            RegimeKind::NoiselessFeedback => "noiseless_feedback",
            RegimeKind::StateEstimateFeedback => "state_estimate_feedback",
            RegimeKind::SeparationOutputFeedback => "separation_output_feedback",
        }
    }

    /// Checks that the schedule (and measurement model) fit the regime.
    pub fn check(self, s: &SystemSchedule, m: Option<&MeasurementModel>) -> Result<()> {
        let mismatch = |requirement| Err(Error::RegimeMismatch {
            regime: self.name(),
            requirement,
        });
        match self {
            RegimeKind::NoFeedback if !s.all_feedback_noise(f64::is_infinite) => {
                mismatch("N_f = inf at every step")
            }
            RegimeKind::NoiselessFeedback if !s.all_feedback_noise(|nf| nf == 0.0) => {
                mismatch("N_f = 0 at every step")
            }
            RegimeKind::StateEstimateFeedback if !s.all_feedback_noise(f64::is_finite) => {
                mismatch("finite N_f")
            }
            RegimeKind::SeparationOutputFeedback if m.is_none() => mismatch("a measurement model"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        RegimeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = RegimeKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown regime `{s}`, expected one of {}", names.join(", "))
            })
    }
}

/// Theoretical series for a regime.
pub fn predict(
    kind: RegimeKind,
    s: &SystemSchedule,
    m: Option<&MeasurementModel>,
    form: ResidualRecursion,
) -> Result<VariancePrediction> {
    kind.check(s, m)?;
    match kind {
        RegimeKind::OutputFeedback => Ok(recursions::predict_output_fb(s)),
        RegimeKind::NoFeedback => Ok(recursions::predict_no_feedback(s)),
        RegimeKind::NoiselessFeedback => Ok(recursions::predict_noiseless_fb(s)),
        RegimeKind::StateEstimateFeedback => recursions::predict_state_estimate_fb(s, form),
        RegimeKind::SeparationOutputFeedback => {
            recursions::predict_separation(s, m.expect("checked above"))
        }
    }
}

/// What the encoder sees at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepIO {
    /// New state input: `x(t+1)`, or the pre-filter estimate in the
    /// separation regime.
    pub x_t: f64,
    /// Feedback of the previous transmission, `y_f(t)`.
    pub y_f_prev: f64,
}

/// Parameters of the transition from transmission `t` to `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub step: StepParams,
    pub sigma2: f64,
    pub sigbar2: f64,
    pub sigma2_next: f64,
    pub sigbar2_next: f64,
    pub power_next: f64,
}

impl Transition {
    fn gains(&self) -> recursions::Gains {
        gains(self.step.a, self.step.power, self.step.noise, self.sigma2).expect("non-negative variance")
    }

    fn scale_next(&self) -> f64 {
        scale(self.power_next, self.sigma2_next)
    }
}

fn scale(power: f64, sigma2: f64) -> f64 {
    if sigma2 > 0.0 {
        (power / sigma2).sqrt()
    } else {
        0.0
    }
}

impl SchemeState {
    /// State at the first transmission `t = 1`: the decoder holds
    /// `xhat(1) = 0`, so every encoder transmits its scaled input.
    pub fn first(kind: RegimeKind, x1: f64, sigma2: f64, power: f64) -> Self {
        let enc = match kind {
            RegimeKind::StateEstimateFeedback => x1,
            _ => 0.0,
        };
        SchemeState {
            t: 1,
            xhat: 0.0,
            enc,
            sigma2,
            sigbar2: 0.0,
            cov: None,
            x: x1,
            z: scale(power, sigma2) * x1,
        }
    }

    fn advance(&self, io: StepIO, tr: &Transition, enc: f64, z: f64) -> Self {
        SchemeState {
            t: self.t + 1,
            enc,
            sigma2: tr.sigma2_next,
            sigbar2: tr.sigbar2_next,
            x: io.x_t,
            z,
            ..*self
        }
    }
}

/// `s(t+1) = a s(t) + K (z(t) + nhat(t))` with
/// `nhat = N/(N+N_f) (y_f - z)`, then `z(t+1) = sqrt(P)/sigma (x - s)`.
pub fn encoder_step_output_fb(state: &SchemeState, io: StepIO, tr: &Transition) -> (f64, SchemeState) {
    let p = &tr.step;
    let nhat = if p.feedback_noise.is_infinite() {
        0.0
    } else {
        p.noise / (p.noise + p.feedback_noise) * (io.y_f_prev - state.z)
    };
    let s_next = p.a * state.enc + tr.gains().k * (state.z + nhat);
    let z = tr.scale_next() * (io.x_t - s_next);
    (z, state.advance(io, tr, s_next, z))
}

/// The transmitter rebuilds `xhat` from the fed-back `y` and sends the
/// scaled error `x - xhat`.
pub fn encoder_step_noiseless_fb(state: &SchemeState, io: StepIO, tr: &Transition) -> (f64, SchemeState) {
    let xhat_next = decoder_step(state.enc, io.y_f_prev, tr.step.a, tr.gains().k);
    let z = tr.scale_next() * (io.x_t - xhat_next);
    (z, state.advance(io, tr, xhat_next, z))
}

/// `xcheck(t+1) = (a - K sqrt(P)/sigma) xcheck + x(t+1) - a x(t)
///              + a sigbar^2/(sigbar^2 + N_f) (x(t) - xcheck(t) - y_f(t))`.
pub fn encoder_step_state_estimate_fb(
    state: &SchemeState,
    io: StepIO,
    tr: &Transition,
) -> (f64, SchemeState) {
    let p = &tr.step;
    let g = tr.gains();
    let correction = if tr.sigbar2 > 0.0 {
        p.a * tr.sigbar2 / (tr.sigbar2 + p.feedback_noise)
    } else {
        0.0
    };
    let xcheck = (p.a - g.k * g.scale) * state.enc + io.x_t - p.a * state.x
        + correction * (state.x - state.enc - io.y_f_prev);
    let z = tr.scale_next() * xcheck;
    (z, state.advance(io, tr, xcheck, z))
}

/// `xhat(t+1) = a xhat(t) + K y(t)`.
pub fn decoder_step(xhat: f64, y: f64, a: f64, k: f64) -> f64 {
    a * xhat + k * y
}

/// Standard normal draws of one trial, indexed by time `t = 0..T-1`.
/// `n[0]` and `n_f[0]` are never used (no transmission at `t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStreams {
    pub x0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub n: Vec<f64>,
    pub n_f: Vec<f64>,
}

impl NoiseStreams {
    fn check(&self, horizon: usize) -> Result<()> {
        for (name, xs) in [("w", &self.w), ("v", &self.v), ("n", &self.n), ("n_f", &self.n_f)] {
            if xs.len() != horizon {
                return Err(Error::LengthMismatch {
                    name,
                    len: xs.len(),
                    expected: horizon,
                });
            }
        }
        Ok(())
    }
}

/// A regime bound to a schedule, with its gains precomputed once so many
/// trajectories can share them.
#[derive(Debug, Clone)]
pub struct PreparedScheme {
    kind: RegimeKind,
    schedule: SystemSchedule,
    measurement: Option<MeasurementModel>,
    prediction: VariancePrediction,
    prefilter: Option<KalmanPrefilter>,
}

impl PreparedScheme {
    pub fn new(
        kind: RegimeKind,
        schedule: &SystemSchedule,
        measurement: Option<&MeasurementModel>,
        form: ResidualRecursion,
    ) -> Result<Self> {
        let prediction = predict(kind, schedule, measurement, form)?;
        let prefilter = match kind {
            RegimeKind::SeparationOutputFeedback => Some(recursions::kalman_prefilter(
                schedule,
                measurement.expect("checked by predict"),
            )?),
            _ => None,
        };
        Ok(Self {
            kind,
            schedule: schedule.clone(),
            measurement: measurement.cloned(),
            prediction,
            prefilter,
        })
    }

    pub fn kind(&self) -> RegimeKind {
        self.kind
    }

    pub fn schedule(&self) -> &SystemSchedule {
        &self.schedule
    }

    pub fn prediction(&self) -> &VariancePrediction {
        &self.prediction
    }

    /// Plant noise `w(t)` and, in the separation regime, measurement noise
    /// `v(t)` with the configured cross-covariance.
    fn plant_noise(&self, streams: &NoiseStreams, t: usize) -> (f64, f64) {
        match &self.measurement {
            Some(m) if self.kind == RegimeKind::SeparationOutputFeedback => {
                let (vww, vwv, vvv) = (m.v_ww()[t], m.v_wv()[t], m.v_vv()[t]);
                if vww > 0.0 {
                    let sw = vww.sqrt();
                    let rest = (vvv - vwv * vwv / vww).max(0.0).sqrt();
                    (sw * streams.w[t], vwv / sw * streams.w[t] + rest * streams.v[t])
                } else {
                    (0.0, vvv.sqrt() * streams.v[t])
                }
            }
            _ => (streams.w[t], 0.0),
        }
    }

    pub fn run(&self, streams: &NoiseStreams, seed: u64, trial: u64) -> Result<TrajectoryRecord> {
        let s = &self.schedule;
        let horizon = s.horizon();
        streams.check(horizon)?;
        let sigma2 = &self.prediction.sigma2;
        let sigbar2 = &self.prediction.vbar;

        let mut x = vec![0.0; horizon + 1];
        let mut xhat = vec![0.0; horizon + 1];
        let mut z = vec![0.0; horizon + 1];
        let mut y = vec![0.0; horizon + 1];
        let mut y_f = vec![0.0; horizon + 1];

        x[0] = s.initial_variance().sqrt() * streams.x0;
        let mut prefilter = self.prefilter.as_ref().map(|kf| {
            let m = self.measurement.as_ref().expect("separation has a measurement model");
            Prefilter::new(kf, m)
        });
        // state input of the encoder at time t
        let observe = |t: usize, x_t: f64, v_t: f64, prefilter: &mut Option<Prefilter>| match prefilter {
            Some(pf) => pf.update(t, x_t, v_t, s.a()),
            None => x_t,
        };

        let (w0, v0) = self.plant_noise(streams, 0);
        observe(0, x[0], v0, &mut prefilter);
        x[1] = s.a()[0] * x[0] + s.b()[0] * w0;

        if horizon >= 2 {
            let (_, v1) = self.plant_noise(streams, 1);
            let input = observe(1, x[1], v1, &mut prefilter);
            let mut state = SchemeState::first(self.kind, input, sigma2[0], s.power()[1]);
            z[1] = state.z;
            for t in 1..horizon {
                let p = s.step(t);
                y[t] = z[t] + p.noise.sqrt() * streams.n[t];
                let phi = match self.kind {
                    RegimeKind::StateEstimateFeedback => xhat[t],
                    _ => y[t],
                };
                y_f[t] = if p.feedback_noise.is_infinite() {
                    0.0
                } else {
                    phi + p.feedback_noise.sqrt() * streams.n_f[t]
                };
                let k = gains(p.a, p.power, p.noise, sigma2[t - 1])?.k;
                xhat[t + 1] = decoder_step(xhat[t], y[t], p.a, k);
                let (w_t, _) = self.plant_noise(streams, t);
                x[t + 1] = p.a * x[t] + p.b * w_t;

                if t + 1 < horizon {
                    let (_, v_next) = self.plant_noise(streams, t + 1);
                    let input = observe(t + 1, x[t + 1], v_next, &mut prefilter);
                    let tr = Transition {
                        step: p,
                        sigma2: sigma2[t - 1],
                        sigbar2: sigbar2[t - 1],
                        sigma2_next: sigma2[t],
                        sigbar2_next: sigbar2[t],
                        power_next: s.power()[t + 1],
                    };
                    let io = StepIO {
                        x_t: input,
                        y_f_prev: y_f[t],
                    };
                    let (z_next, next) = match self.kind {
                        RegimeKind::NoiselessFeedback => encoder_step_noiseless_fb(&state, io, &tr),
                        RegimeKind::StateEstimateFeedback => {
                            encoder_step_state_estimate_fb(&state, io, &tr)
                        }
                        _ => encoder_step_output_fb(&state, io, &tr),
                    };
                    z[t + 1] = z_next;
                    state = next;
                }
            }
        }

        let sq_err = x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).collect();
        Ok(TrajectoryRecord {
            seed,
            trial,
            x,
            z,
            y,
            y_f,
            xhat,
            sq_err,
        })
    }
}

/// Running transmitter-side Kalman estimate `xbreve(t) = E{x(t) | gamma^t}`.
struct Prefilter<'a> {
    gain: &'a [f64],
    c: f64,
    d: f64,
    predicted: f64,
}

impl<'a> Prefilter<'a> {
    fn new(kf: &'a KalmanPrefilter, m: &MeasurementModel) -> Self {
        Self {
            gain: &kf.gain,
            c: m.c,
            d: m.d,
            predicted: 0.0,
        }
    }

    fn update(&mut self, t: usize, x: f64, v: f64, a: &[f64]) -> f64 {
        let gamma = self.c * x + self.d * v;
        let estimate = self.predicted + self.gain[t] * (gamma - self.c * self.predicted);
        if t < a.len() {
            self.predicted = a[t] * estimate;
        }
        estimate
    }
}

/// One full trajectory of `kind` on the given noise draws.
pub fn run_regime(
    schedule: &SystemSchedule,
    measurement: Option<&MeasurementModel>,
    kind: RegimeKind,
    streams: &NoiseStreams,
    form: ResidualRecursion,
) -> Result<TrajectoryRecord> {
    PreparedScheme::new(kind, schedule, measurement, form)?.run(streams, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_streams(horizon: usize) -> NoiseStreams {
        NoiseStreams {
            x0: 0.0,
            w: vec![0.0; horizon],
            v: vec![0.0; horizon],
            n: vec![0.0; horizon],
            n_f: vec![0.0; horizon],
        }
    }

    fn transition(a: f64, nf: f64, sigma2: f64) -> Transition {
        Transition {
            step: StepParams {
                a,
                b: 1.0,
                power: 1.0,
                noise: 1.0,
                feedback_noise: nf,
            },
            sigma2,
            sigbar2: 0.0,
            sigma2_next: sigma2,
            sigbar2_next: 0.0,
            power_next: 1.0,
        }
    }

    #[test]
    fn zero_error_zero_transmission() {
        let state = SchemeState::first(RegimeKind::OutputFeedback, 0.0, 1.0, 1.0);
        assert_eq!(state.z, 0.0);
        let (z, _) = encoder_step_output_fb(&state, StepIO { x_t: 0.0, y_f_prev: 0.0 }, &transition(0.9, 0.5, 1.0));
        assert_eq!(z, 0.0);
    }

    #[test]
    fn output_fb_without_feedback_ignores_y_f() {
        let state = SchemeState::first(RegimeKind::OutputFeedback, 1.5, 2.0, 1.0);
        let tr = transition(0.9, f64::INFINITY, 2.0);
        let (z1, s1) = encoder_step_output_fb(&state, StepIO { x_t: 0.3, y_f_prev: 123.0 }, &tr);
        let (z2, s2) = encoder_step_output_fb(&state, StepIO { x_t: 0.3, y_f_prev: -7.0 }, &tr);
        assert_eq!((z1, s1), (z2, s2));
        let k = gains(0.9, 1.0, 1.0, 2.0).unwrap().k;
        assert_eq!(s1.enc, k * state.z);
    }

    #[test]
    fn noiseless_output_fb_replicates_decoder() {
        let state = SchemeState::first(RegimeKind::OutputFeedback, 1.5, 2.0, 1.0);
        let tr = transition(0.9, 0.0, 2.0);
        let y = state.z + 0.37;
        let (_, next) = encoder_step_output_fb(&state, StepIO { x_t: 0.3, y_f_prev: y }, &tr);
        let k = gains(0.9, 1.0, 1.0, 2.0).unwrap().k;
        let xhat = decoder_step(0.0, y, 0.9, k);
        assert!((next.enc - xhat).abs() < 1e-15);
    }

    #[test]
    fn decoder_examples() {
        assert_eq!(decoder_step(2.0, 5.0, 0.5, 0.0), 1.0);
        assert_eq!(decoder_step(0.0, 1.0, 1.0, 0.25), 0.25);
    }

    #[test]
    fn state_estimate_zero_residual_has_no_correction() {
        let state = SchemeState::first(RegimeKind::StateEstimateFeedback, 1.0, 1.0, 1.0);
        let tr = transition(0.9, 0.5, 1.0);
        let (_, a) = encoder_step_state_estimate_fb(&state, StepIO { x_t: 0.4, y_f_prev: 10.0 }, &tr);
        let (_, b) = encoder_step_state_estimate_fb(&state, StepIO { x_t: 0.4, y_f_prev: -10.0 }, &tr);
        assert_eq!(a.enc, b.enc);
    }

    #[test]
    fn first_transmission_sends_state() {
        // x(1) = b w(0) from a zero initial state
        let s = SystemSchedule::constant(3, 0.7, 2.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        let mut streams = zero_streams(3);
        streams.w[0] = 0.8;
        let rec = run_regime(&s, None, RegimeKind::StateEstimateFeedback, &streams, ResidualRecursion::default()).unwrap();
        assert_eq!(rec.x[1], 1.6);
        // sigma_1^2 = b^2 = 4, so z(1) = x(1) / 2
        assert_eq!(rec.z[1], 0.8);
    }

    #[test]
    fn record_layout() {
        let s = SystemSchedule::constant(5, 0.9, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let mut streams = zero_streams(5);
        streams.x0 = 1.0;
        streams.n = vec![0.1; 5];
        let rec = run_regime(&s, None, RegimeKind::OutputFeedback, &streams, ResidualRecursion::default()).unwrap();
        for v in [&rec.x, &rec.z, &rec.y, &rec.y_f, &rec.xhat, &rec.sq_err] {
            assert_eq!(v.len(), 6);
        }
        assert_eq!((rec.y[0], rec.z[0], rec.z[5], rec.y[5]), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((rec.xhat[0], rec.xhat[1]), (0.0, 0.0));
        assert_eq!(rec.x[1], 0.9);
    }

    #[test]
    fn regime_consistency() {
        let s = SystemSchedule::constant(4, 0.9, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert!(RegimeKind::NoFeedback.check(&s, None).is_err());
        assert!(RegimeKind::NoiselessFeedback.check(&s, None).is_err());
        assert!(RegimeKind::SeparationOutputFeedback.check(&s, None).is_err());
        assert!(RegimeKind::OutputFeedback.check(&s, None).is_ok());
        let inf = s.with_feedback_noise(f64::INFINITY).unwrap();
        assert!(RegimeKind::StateEstimateFeedback.check(&inf, None).is_err());
        assert!(RegimeKind::NoFeedback.check(&inf, None).is_ok());
    }

    #[test]
    fn regime_names_round_trip() {
        for kind in RegimeKind::ALL {
            assert_eq!(kind.name().parse::<RegimeKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<RegimeKind>().is_err());
    }

    #[test]
    fn stream_length_checked() {
        let s = SystemSchedule::constant(4, 0.9, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let streams = zero_streams(3);
        assert!(matches!(
            run_regime(&s, None, RegimeKind::OutputFeedback, &streams, ResidualRecursion::default()),
            Err(Error::LengthMismatch { name: "w", .. })
        ));
    }
}
