//! Noise-free propagation of the gains and error variances of every regime.
//!
//! Everything here is a deterministic function of the schedule: the encoder
//! and decoder can both evaluate it offline, and the simulated filters use it
//! for their gains.

use crate::error::{Error, Result};
use crate::model::{Cov2, MeasurementModel, StepParams, SystemSchedule, VariancePrediction};

/// Gains of one transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    /// Decoder gain `K = a sigma sqrt(P) / (P + N)`.
    pub k: f64,
    /// `kappa = sigma sqrt(P) / (P + N)`, so that `K = a kappa`.
    pub kappa: f64,
    /// Encoder scaling `sqrt(P) / sigma`, zero when `sigma = 0`.
    pub scale: f64,
}

pub fn gains(a: f64, power: f64, noise: f64, sigma2: f64) -> Result<Gains> {
    if sigma2.is_nan() || sigma2 < 0.0 {
        return Err(Error::NegativeVariance(sigma2));
    }
    let sigma = sigma2.sqrt();
    let root_p = power.sqrt();
    let kappa = sigma * root_p / (power + noise);
    let scale = if sigma > 0.0 { root_p / sigma } else { 0.0 };
    Ok(Gains {
        k: a * kappa,
        kappa,
        scale,
    })
}

fn step_gains(p: &StepParams, sigma2: f64) -> Gains {
    gains(p.a, p.power, p.noise, sigma2.max(0.0)).expect("clamped variance")
}

/// Variance of the transmitter's estimate `nhat = E{n | n + n_f}`.
pub fn feedback_estimate_variance(noise: f64, feedback_noise: f64) -> f64 {
    if feedback_noise.is_infinite() {
        0.0
    } else if feedback_noise == 0.0 {
        noise
    } else {
        noise * noise / (noise + feedback_noise)
    }
}

/// Variance of the channel-noise residual `ntilde = n - nhat` the
/// transmitter cannot recover from its feedback.
pub fn innovation_residual_variance(noise: f64, feedback_noise: f64) -> f64 {
    if feedback_noise.is_infinite() {
        noise
    } else if feedback_noise == 0.0 {
        0.0
    } else {
        noise * feedback_noise / (noise + feedback_noise)
    }
}

/// One step of the transmitter covariance recursion
/// `A cov A^T + diag(K^2 N^2 / (N + N_f), b^2)` with
/// `A = [[aN/(P+N), aP/(P+N)], [0, a]]`.
pub fn propagate_cov_output_fb(
    cov: Cov2,
    a: f64,
    b: f64,
    power: f64,
    noise: f64,
    feedback_noise: f64,
    k: f64,
) -> Cov2 {
    propagate_with_process_variance(cov, a, b * b, power, noise, feedback_noise, k)
}

fn propagate_with_process_variance(
    cov: Cov2,
    a: f64,
    q: f64,
    power: f64,
    noise: f64,
    feedback_noise: f64,
    k: f64,
) -> Cov2 {
    let alpha = a * noise / (power + noise);
    let beta = a * power / (power + noise);
    let drive = k * k * feedback_estimate_variance(noise, feedback_noise);
    Cov2 {
        ss: alpha * alpha * cov.ss + 2.0 * alpha * beta * cov.sx + beta * beta * cov.xx + drive,
        sx: alpha * a * cov.sx + beta * a * cov.xx,
        xx: a * a * cov.xx + q,
    }
}

/// Step 0 carries no transmission (`y(0) = 0`), so `s(1) = a s(0)`.
fn idle_step(cov: Cov2, a: f64, q: f64) -> Cov2 {
    Cov2 {
        ss: a * a * cov.ss,
        sx: a * a * cov.sx,
        xx: a * a * cov.xx + q,
    }
}

/// One transmission step of the output-feedback variances: the covariance of
/// `(s, x)` and the variance `vbar` of `xbar = s - xhat`.
pub fn output_fb_step(cov: Cov2, vbar: f64, p: &StepParams) -> (Cov2, f64) {
    let k = step_gains(p, cov.sigma2()).k;
    let vbar_next = p.a * p.a * vbar + k * k * innovation_residual_variance(p.noise, p.feedback_noise);
    let cov_next = propagate_cov_output_fb(cov, p.a, p.b, p.power, p.noise, p.feedback_noise, k);
    (cov_next, vbar_next)
}

/// Output-feedback series driven by process variances `q(t)` instead of
/// `b(t)^2`, starting from `Var x(0) = v0`.
#[allow(clippy::needless_range_loop)]
pub(crate) fn output_fb_series(s: &SystemSchedule, q: &[f64], v0: f64) -> VariancePrediction {
    let horizon = s.horizon();
    let mut out = VariancePrediction::with_capacity(horizon);
    let mut cov = idle_step(Cov2::new(0.0, 0.0, v0), s.a()[0], q[0]);
    let mut vbar = 0.0;
    for t in 1..=horizon {
        let sigma2 = cov.sigma2().max(0.0);
        out.push(sigma2, vbar);
        if t == horizon {
            break;
        }
        let p = s.step(t);
        let k = step_gains(&p, sigma2).k;
        vbar = p.a * p.a * vbar + k * k * innovation_residual_variance(p.noise, p.feedback_noise);
        cov = propagate_with_process_variance(cov, p.a, q[t], p.power, p.noise, p.feedback_noise, k);
    }
    out
}

fn process_variances(s: &SystemSchedule) -> Vec<f64> {
    s.b().iter().map(|b| b * b).collect()
}

/// Output feedback (`phi = y`) with any `N_f` in `[0, +inf]`.
pub fn predict_output_fb(s: &SystemSchedule) -> VariancePrediction {
    output_fb_series(s, &process_variances(s), s.initial_variance())
}

/// No feedback: `s(t+1) = a s(t) + K z(t)` and `ntilde = n`. Written out
/// separately from [`predict_output_fb`] so that the `N_f = +inf` limit of
/// the latter can be checked against it.
pub fn predict_no_feedback(s: &SystemSchedule) -> VariancePrediction {
    let horizon = s.horizon();
    let mut out = VariancePrediction::with_capacity(horizon);
    let (a0, b0) = (s.a()[0], s.b()[0]);
    let mut cov = Cov2::new(0.0, 0.0, a0 * a0 * s.initial_variance() + b0 * b0);
    let mut vbar = 0.0;
    for t in 1..=horizon {
        let sigma2 = cov.sigma2().max(0.0);
        out.push(sigma2, vbar);
        if t == horizon {
            break;
        }
        let p = s.step(t);
        let k = step_gains(&p, sigma2).k;
        vbar = p.a * p.a * vbar + k * k * p.noise;
        let alpha = p.a * p.noise / (p.power + p.noise);
        let beta = p.a * p.power / (p.power + p.noise);
        cov = Cov2 {
            ss: alpha * alpha * cov.ss + 2.0 * alpha * beta * cov.sx + beta * beta * cov.xx,
            sx: alpha * p.a * cov.sx + beta * p.a * cov.xx,
            xx: p.a * p.a * cov.xx + p.b * p.b,
        };
    }
    out
}

/// Noiseless feedback: `sigma_{t+1}^2 = N/(N+P) a^2 sigma_t^2 + b^2`,
/// `sigma_1^2 = a(0)^2 V_xx0 + b(0)^2`. `N_f` is ignored.
pub fn predict_noiseless_fb(s: &SystemSchedule) -> VariancePrediction {
    let horizon = s.horizon();
    let mut out = VariancePrediction::with_capacity(horizon);
    let (a0, b0) = (s.a()[0], s.b()[0]);
    let mut sigma2 = a0 * a0 * s.initial_variance() + b0 * b0;
    for t in 1..=horizon {
        out.push(sigma2, 0.0);
        if t == horizon {
            break;
        }
        let p = s.step(t);
        sigma2 = p.noise / (p.noise + p.power) * p.a * p.a * sigma2 + p.b * p.b;
    }
    out
}

/// Which recursion to use for the variance `sigbar^2` of the part of the
/// decoder error hidden from the transmitter under state-estimate feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualRecursion {
    /// Variance propagated through the encoder's state equations:
    /// `a^2 N_f sigbar^2 / (sigbar^2 + N_f) + a^2 P N sigma^2 / (P + N)^2`.
    #[default]
    StateEquations,
    /// `a^2 N_f^2 sigbar^2 / (sigbar^2 + N_f) + a^2 P N sigma^2 / (P + N)^2`.
    /// Not dimensionally consistent; kept for comparison only.
    SquaredFeedbackNoise,
}

/// `sigbar^4 / (sigbar^2 + N_f)`, `N_f sigbar^2 / (sigbar^2 + N_f)` with the
/// `0/0` case at `sigbar^2 = N_f = 0` resolved to zero.
fn residual_split(sigbar2: f64, feedback_noise: f64) -> (f64, f64) {
    if sigbar2 == 0.0 {
        return (0.0, 0.0);
    }
    let denom = sigbar2 + feedback_noise;
    (sigbar2 * sigbar2 / denom, feedback_noise * sigbar2 / denom)
}

/// Maps `(sigma_t^2, sigbar_t^2)` to `(sigma_{t+1}^2, sigbar_{t+1}^2)`.
pub fn state_estimate_step(
    sigma2: f64,
    sigbar2: f64,
    p: &StepParams,
    form: ResidualRecursion,
) -> (f64, f64) {
    let a2 = p.a * p.a;
    let pn = p.power + p.noise;
    let (learned, kept) = residual_split(sigbar2, p.feedback_noise);
    let sigma2_next = a2 * p.noise * p.noise / (pn * pn) * sigma2 + a2 * learned + p.b * p.b;
    let kept = match form {
        ResidualRecursion::StateEquations => kept,
        ResidualRecursion::SquaredFeedbackNoise => p.feedback_noise * kept,
    };
    let sigbar2_next = a2 * kept + a2 * p.power * p.noise / (pn * pn) * sigma2;
    (sigma2_next, sigbar2_next)
}

/// State-estimate feedback (`phi = xhat`). Requires finite `N_f`.
/// Starts from `sigma_1^2 = a(0)^2 V_xx0 + b(0)^2`, `sigbar_1^2 = 0`.
pub fn predict_state_estimate_fb(
    s: &SystemSchedule,
    form: ResidualRecursion,
) -> Result<VariancePrediction> {
    if !s.all_feedback_noise(f64::is_finite) {
        return Err(Error::RegimeMismatch {
            regime: "state-estimate feedback",
            requirement: "finite N_f",
        });
    }
    let horizon = s.horizon();
    let mut out = VariancePrediction::with_capacity(horizon);
    let (a0, b0) = (s.a()[0], s.b()[0]);
    let mut sigma2 = a0 * a0 * s.initial_variance() + b0 * b0;
    let mut sigbar2 = 0.0;
    for t in 1..=horizon {
        out.push(sigma2, sigbar2);
        if t == horizon {
            break;
        }
        (sigma2, sigbar2) = state_estimate_step(sigma2, sigbar2, &s.step(t), form);
    }
    Ok(out)
}

/// Transmitter-side Kalman filter for `gamma(t) = c x(t) + d v(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanPrefilter {
    /// `L(t)` for `t = 0..=T`.
    pub gain: Vec<f64>,
    /// One-step prediction error variance `V_xixi(t)` for `t = 0..=T`.
    pub error_variance: Vec<f64>,
    /// Filtered error variance `E (x(t) - xbreve(t))^2 = V_xixi (1 - L c)`.
    pub filtered_variance: Vec<f64>,
    /// Equivalent process noise `beta^2(t) = L(t+1)^2 (c^2 V_xixi(t+1) + d^2 V_vv(t+1))`
    /// of the estimate dynamics, `t = 0..T-1`.
    pub beta2: Vec<f64>,
    /// `Var xbreve(0) = L(0)^2 (c^2 V_xx0 + d^2 V_vv(0))`.
    pub initial_estimate_variance: f64,
}

pub fn kalman_prefilter(s: &SystemSchedule, m: &MeasurementModel) -> Result<KalmanPrefilter> {
    let horizon = s.horizon();
    let (c, d) = (m.c, m.d);
    let mut gain = Vec::with_capacity(horizon + 1);
    let mut error_variance = Vec::with_capacity(horizon + 1);
    let mut innovation = Vec::with_capacity(horizon + 1);
    let mut v = s.initial_variance();
    for t in 0..=horizon {
        let innov = c * c * v + d * d * m.v_vv()[t];
        // a zero innovation variance forces v c = 0: nothing to learn
        let l = if innov > 0.0 { v * c / innov } else { 0.0 };
        gain.push(l);
        error_variance.push(v);
        innovation.push(innov);
        if t == horizon {
            break;
        }
        let (a, b) = (s.a()[t], s.b()[t]);
        let closed = a - a * l * c;
        let noise_gain = -a * l * d;
        v = closed * closed * v
            + b * b * m.v_ww()[t]
            + 2.0 * b * noise_gain * m.v_wv()[t]
            + noise_gain * noise_gain * m.v_vv()[t];
    }
    let filtered_variance = error_variance
        .iter()
        .zip(&gain)
        .map(|(v, l)| (v * (1.0 - l * c)).max(0.0))
        .collect();
    let beta2 = (0..horizon)
        .map(|t| gain[t + 1] * gain[t + 1] * innovation[t + 1])
        .collect();
    let initial_estimate_variance = gain[0] * gain[0] * innovation[0];
    Ok(KalmanPrefilter {
        gain,
        error_variance,
        filtered_variance,
        beta2,
        initial_estimate_variance,
    })
}

/// Output feedback with the transmitter seeing only `gamma`: the
/// full-state scheme applied to the pre-filter estimate, whose dynamics have
/// process noise `beta^2(t)`. The pre-filter error is added to `vbar`.
pub fn predict_separation(s: &SystemSchedule, m: &MeasurementModel) -> Result<VariancePrediction> {
    let kf = kalman_prefilter(s, m)?;
    let inner = output_fb_series(s, &kf.beta2, kf.initial_estimate_variance);
    let mut out = VariancePrediction::with_capacity(s.horizon());
    for (k, (&sigma2, &vbar)) in inner.sigma2.iter().zip(&inner.vbar).enumerate() {
        out.push(sigma2, vbar + kf.filtered_variance[k + 1]);
    }
    Ok(out)
}
