//! Domain types shared by every regime: parameter schedules, the measurement
//! model of the separation setting, the 2x2 transmitter covariance and the
//! per-step series produced by predictions and simulations.
//!
//! Time convention: the plant runs `x(t+1) = a(t) x(t) + b(t) w(t)` for
//! `t = 0..T-1`, the receiver sees `y(0) = 0`, and transmissions happen at
//! `t = 1..T-1`. Decoder errors are reported for `t = 1..T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar broadcast to every step, or an explicit per-step series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Scalar(f64),
    Series(Vec<f64>),
}

impl Param {
    fn expand(&self, name: &'static str, len: usize) -> Result<Vec<f64>> {
        match self {
            Param::Scalar(v) => Ok(vec![*v; len]),
            Param::Series(vs) if vs.len() == len => Ok(vs.clone()),
            Param::Series(vs) => Err(Error::LengthMismatch {
                name,
                len: vs.len(),
                expected: len,
            }),
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Scalar(v)
    }
}

impl From<Vec<f64>> for Param {
    fn from(v: Vec<f64>) -> Self {
        Param::Series(v)
    }
}

/// Unchecked schedule as written by a user; see [`validate_schedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub horizon: usize,
    pub a: Param,
    pub b: Param,
    pub power: Param,
    pub noise: Param,
    pub feedback_noise: Param,
    pub initial_variance: f64,
}

impl ScheduleSpec {
    pub fn constant(
        horizon: usize,
        a: f64,
        b: f64,
        power: f64,
        noise: f64,
        feedback_noise: f64,
        initial_variance: f64,
    ) -> Self {
        Self {
            horizon,
            a: a.into(),
            b: b.into(),
            power: power.into(),
            noise: noise.into(),
            feedback_noise: feedback_noise.into(),
            initial_variance,
        }
    }
}

/// Plant and channel constants of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub a: f64,
    pub b: f64,
    pub power: f64,
    pub noise: f64,
    /// `f64::INFINITY` means the feedback link carries nothing.
    pub feedback_noise: f64,
}

/// Validated per-step plant and channel parameters.
///
/// All series have length `T`. Entry `t` holds `a(t)`, `b(t)` for the plant
/// transition out of `t`, and `P(t)`, `N(t)`, `N_f(t)` for a transmission
/// at `t` (entry 0 is constrained but never used for transmission).
/// `N_f = 0` is noiseless feedback, `N_f = +inf` is no feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSchedule {
    a: Vec<f64>,
    b: Vec<f64>,
    power: Vec<f64>,
    noise: Vec<f64>,
    feedback_noise: Vec<f64>,
    initial_variance: f64,
}

/// Checks every schedule invariant and broadcasts scalars to length `T`.
/// Reports the first violated constraint.
pub fn validate_schedule(spec: &ScheduleSpec) -> Result<SystemSchedule> {
    let t = spec.horizon;
    if t == 0 {
        return Err(Error::EmptyHorizon);
    }
    let a = spec.a.expand("a", t)?;
    let b = spec.b.expand("b", t)?;
    let power = spec.power.expand("P", t)?;
    let noise = spec.noise.expand("N", t)?;
    let feedback_noise = spec.feedback_noise.expand("N_f", t)?;

    check_finite("a", &a)?;
    check_finite("b", &b)?;
    check_positive("P", &power)?;
    check_positive("N", &noise)?;
    for (index, &value) in feedback_noise.iter().enumerate() {
        // +inf is allowed here; NaN and negatives are not
        if value.is_nan() || value < 0.0 {
            return Err(Error::Negative {
                name: "N_f",
                index,
                value,
            });
        }
    }
    let v0 = spec.initial_variance;
    if !(v0.is_finite() && v0 >= 0.0) {
        return Err(Error::InvalidScalar {
            name: "V_xx0",
            value: v0,
        });
    }

    Ok(SystemSchedule {
        a,
        b,
        power,
        noise,
        feedback_noise,
        initial_variance: v0,
    })
}

fn check_finite(name: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            name,
            index,
            value: xs[index],
        }),
        None => Ok(()),
    }
}

fn check_positive(name: &'static str, xs: &[f64]) -> Result<()> {
    for (index, &value) in xs.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { name, index, value });
        }
        if value <= 0.0 {
            return Err(Error::NonPositive { name, index, value });
        }
    }
    Ok(())
}

fn constant_value(name: &'static str, xs: &[f64]) -> Result<f64> {
    let first = xs[0];
    if xs.iter().all(|&x| x == first || (x.is_nan() && first.is_nan())) {
        Ok(first)
    } else {
        Err(Error::NonConstant { name })
    }
}

impl SystemSchedule {
    /// Validated constant schedule.
    pub fn constant(
        horizon: usize,
        a: f64,
        b: f64,
        power: f64,
        noise: f64,
        feedback_noise: f64,
        initial_variance: f64,
    ) -> Result<Self> {
        validate_schedule(&ScheduleSpec::constant(
            horizon,
            a,
            b,
            power,
            noise,
            feedback_noise,
            initial_variance,
        ))
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn feedback_noise(&self) -> &[f64] {
        &self.feedback_noise
    }

    pub fn initial_variance(&self) -> f64 {
        self.initial_variance
    }

    pub fn step(&self, t: usize) -> StepParams {
        StepParams {
            a: self.a[t],
            b: self.b[t],
            power: self.power[t],
            noise: self.noise[t],
            feedback_noise: self.feedback_noise[t],
        }
    }

    /// Expanded form; validating it again yields an identical schedule.
    pub fn to_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            horizon: self.horizon(),
            a: Param::Series(self.a.clone()),
            b: Param::Series(self.b.clone()),
            power: Param::Series(self.power.clone()),
            noise: Param::Series(self.noise.clone()),
            feedback_noise: Param::Series(self.feedback_noise.clone()),
            initial_variance: self.initial_variance,
        }
    }

    /// Same schedule with `N_f(t)` replaced by a constant.
    pub fn with_feedback_noise(&self, feedback_noise: f64) -> Result<Self> {
        let mut spec = self.to_spec();
        spec.feedback_noise = Param::Scalar(feedback_noise);
        validate_schedule(&spec)
    }

    /// The constant step parameters, or an error naming the first series
    /// that varies over time.
    pub fn constant_params(&self) -> Result<StepParams> {
        Ok(StepParams {
            a: constant_value("a", &self.a)?,
            b: constant_value("b", &self.b)?,
            power: constant_value("P", &self.power)?,
            noise: constant_value("N", &self.noise)?,
            feedback_noise: constant_value("N_f", &self.feedback_noise)?,
        })
    }

    pub fn all_feedback_noise(&self, pred: impl Fn(f64) -> bool) -> bool {
        self.feedback_noise.iter().all(|&nf| pred(nf))
    }
}

/// Unchecked measurement model for the separation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    pub c: f64,
    pub d: f64,
    pub v_ww: Param,
    pub v_wv: Param,
    pub v_vv: Param,
}

/// Transmitter measurement `gamma(t) = c x(t) + d v(t)` with `(w(t), v(t))`
/// jointly Gaussian. Covariance series have length `T + 1` (steps `0..=T`);
/// the pre-filter needs `V_vv(T)` to form the last equivalent process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub c: f64,
    pub d: f64,
    v_ww: Vec<f64>,
    v_wv: Vec<f64>,
    v_vv: Vec<f64>,
}

impl MeasurementSpec {
    pub fn constant(c: f64, d: f64, v_ww: f64, v_wv: f64, v_vv: f64) -> Self {
        Self {
            c,
            d,
            v_ww: v_ww.into(),
            v_wv: v_wv.into(),
            v_vv: v_vv.into(),
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<MeasurementModel> {
        let len = horizon + 1;
        for (name, value) in [("c", self.c), ("d", self.d)] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    name,
                    index: 0,
                    value,
                });
            }
        }
        let v_ww = self.v_ww.expand("V_ww", len)?;
        let v_wv = self.v_wv.expand("V_wv", len)?;
        let v_vv = self.v_vv.expand("V_vv", len)?;
        check_finite("V_wv", &v_wv)?;
        for (name, xs) in [("V_ww", &v_ww), ("V_vv", &v_vv)] {
            check_finite(name, xs)?;
            if let Some(index) = xs.iter().position(|&x| x < 0.0) {
                return Err(Error::Negative {
                    name,
                    index,
                    value: xs[index],
                });
            }
        }
        for step in 0..len {
            let det = v_ww[step] * v_vv[step] - v_wv[step] * v_wv[step];
            let scale = (v_ww[step] * v_vv[step]).max(f64::MIN_POSITIVE);
            if det < -1e-12 * scale {
                return Err(Error::NotPsd { step });
            }
        }
        Ok(MeasurementModel {
            c: self.c,
            d: self.d,
            v_ww,
            v_wv,
            v_vv,
        })
    }
}

impl MeasurementModel {
    pub fn v_ww(&self) -> &[f64] {
        &self.v_ww
    }

    pub fn v_wv(&self) -> &[f64] {
        &self.v_wv
    }

    pub fn v_vv(&self) -> &[f64] {
        &self.v_vv
    }

    /// Perfect state measurement with unit process noise: `gamma = x`.
    pub fn perfect(horizon: usize) -> Self {
        MeasurementSpec::constant(1.0, 0.0, 1.0, 0.0, 0.0)
            .validate(horizon)
            .expect("perfect measurement model is valid")
    }
}

/// Covariance of the stacked transmitter vector `(s(t), x(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cov2 {
    pub ss: f64,
    pub sx: f64,
    pub xx: f64,
}

impl Cov2 {
    pub fn new(ss: f64, sx: f64, xx: f64) -> Self {
        Self { ss, sx, xx }
    }

    /// `E (x - s)^2 = V_xx - 2 V_sx + V_ss`.
    pub fn sigma2(&self) -> f64 {
        self.xx - 2.0 * self.sx + self.ss
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let scale = self.ss.abs().max(self.xx.abs()).max(1.0);
        self.ss >= -tol * scale
            && self.xx >= -tol * scale
            && self.sx * self.sx <= self.ss * self.xx + tol * scale * scale
    }
}

/// Joint encoder/decoder state of one trajectory at step `t`, after `z(t)`
/// has been transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchemeState {
    pub t: usize,
    /// Decoder estimate `xhat(t)`.
    pub xhat: f64,
    /// Encoder memory: `s(t)` (output feedback), the replica of `xhat(t)`
    /// (noiseless feedback) or `xcheck(t)` (state-estimate feedback).
    pub enc: f64,
    pub sigma2: f64,
    /// State-estimate feedback only.
    pub sigbar2: f64,
    /// Output feedback only.
    pub cov: Option<Cov2>,
    /// State input seen by the encoder at `t`.
    pub x: f64,
    /// Last transmitted symbol `z(t)`.
    pub z: f64,
}

/// Deterministic per-step series for `t = 1..=T`; index `k` is time `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePrediction {
    /// Transmit-side error variance `sigma_t^2`.
    pub sigma2: Vec<f64>,
    /// Variance of the part of the decoder error the transmitter cannot see.
    pub vbar: Vec<f64>,
    /// Decoder error `E |x(t) - xhat(t)|^2 = sigma2 + vbar`.
    pub mse: Vec<f64>,
}

impl VariancePrediction {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            sigma2: Vec::with_capacity(n),
            vbar: Vec::with_capacity(n),
            mse: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, sigma2: f64, vbar: f64) {
        self.sigma2.push(sigma2);
        self.vbar.push(vbar);
        self.mse.push(sigma2 + vbar);
    }

    pub fn len(&self) -> usize {
        self.mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse.is_empty()
    }

    pub fn last_mse(&self) -> f64 {
        *self.mse.last().expect("non-empty prediction")
    }

    /// Time average `(1/T) sum_t mse(t)`.
    pub fn average_mse(&self) -> f64 {
        self.mse.iter().sum::<f64>() / self.mse.len() as f64
    }
}

/// One simulated realization on the time grid `t = 0..=T`.
///
/// `z`, `y` and `y_f` are zero at `t = 0` (the convention `y(0) = 0`) and at
/// `t = T`, where nothing is transmitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub trial: u64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub y_f: Vec<f64>,
    pub xhat: Vec<f64>,
    pub sq_err: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule_broadcasts() {
        let s = SystemSchedule::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(s.horizon(), 3);
        assert_eq!(s.a(), &[0.9; 3]);
        assert_eq!(s.feedback_noise(), &[0.1; 3]);
        assert_eq!(s.initial_variance(), 1.0);
    }

    #[test]
    fn zero_power_rejected_with_index() {
        let err = SystemSchedule::constant(2, 0.9, 1.0, 0.0, 1.0, 0.1, 1.0).unwrap_err();
        assert!(err.to_string().starts_with("P(0) must be > 0"), "{err}");

        let mut spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0);
        spec.noise = Param::Series(vec![1.0, 1.0, -2.0]);
        let err = validate_schedule(&spec).unwrap_err();
        assert_eq!(
            err,
            Error::NonPositive {
                name: "N",
                index: 2,
                value: -2.0
            }
        );
    }

    #[test]
    fn infinite_feedback_noise_accepted() {
        let s = SystemSchedule::constant(2, 0.9, 1.0, 1.0, 1.0, f64::INFINITY, 1.0).unwrap();
        assert!(s.all_feedback_noise(f64::is_infinite));
    }

    #[test]
    fn invalid_entries_rejected() {
        let mut spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0);
        spec.a = Param::Series(vec![0.9, 0.9]);
        assert!(matches!(
            validate_schedule(&spec),
            Err(Error::LengthMismatch { name: "a", len: 2, expected: 3 })
        ));

        let spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, -0.1, 1.0);
        assert!(matches!(
            validate_schedule(&spec),
            Err(Error::Negative { name: "N_f", .. })
        ));

        let spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, f64::NAN, 1.0);
        assert!(validate_schedule(&spec).is_err());

        let spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, -1.0);
        assert!(matches!(
            validate_schedule(&spec),
            Err(Error::InvalidScalar { name: "V_xx0", .. })
        ));

        let spec = ScheduleSpec::constant(0, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0);
        assert_eq!(validate_schedule(&spec), Err(Error::EmptyHorizon));

        let spec = ScheduleSpec::constant(2, f64::INFINITY, 1.0, 1.0, 1.0, 0.1, 1.0);
        assert!(matches!(
            validate_schedule(&spec),
            Err(Error::NonFinite { name: "a", .. })
        ));
    }

    #[test]
    fn constant_params_detects_variation() {
        let mut spec = ScheduleSpec::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0);
        spec.b = Param::Series(vec![1.0, 2.0, 1.0]);
        let s = validate_schedule(&spec).unwrap();
        assert_eq!(s.constant_params(), Err(Error::NonConstant { name: "b" }));
    }

    #[test]
    fn measurement_psd_check() {
        assert!(MeasurementSpec::constant(1.0, 1.0, 1.0, 0.5, 1.0)
            .validate(4)
            .is_ok());
        assert_eq!(
            MeasurementSpec::constant(1.0, 1.0, 1.0, 2.0, 1.0).validate(4),
            Err(Error::NotPsd { step: 0 })
        );
        let m = MeasurementModel::perfect(3);
        assert_eq!(m.v_vv().len(), 4);
    }

    #[test]
    fn cov2_sigma_identity() {
        let c = Cov2::new(0.25, 0.5, 1.0);
        assert_eq!(c.sigma2(), 0.25);
        assert!(c.is_psd(0.0));
        assert!(!Cov2::new(1.0, 2.0, 1.0).is_psd(1e-12));
    }
}
