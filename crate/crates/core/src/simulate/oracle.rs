//! Exact second moments of the closed loop by symbolic unrolling.
//!
//! Every signal is kept as a vector of coefficients on the independent unit
//! variance sources `(x0, w(0..=T), v(0..=T), n(0..=T), n_f(0..=T))`, so
//! covariances are inner products. The encoder gains are computed from these
//! vectors directly, not from the variance recursions, which makes the
//! result an independent check of them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeasurementModel, SystemSchedule};
use crate::schemes::RegimeKind;

pub const ORACLE_MAX_HORIZON: usize = 12;
/// Singular values below this are dropped when conditioning.
pub const PINV_EPS: f64 = 1e-12;

/// Replaces the transmitted error `xcheck(step)` by
/// `xcheck + (factor - 1) * x(step)`, renormalized to power `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderPerturbation {
    pub step: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `E |x(t) - E[x(t) | y(1..t-1)]|^2` for `t = 1..=T`.
    pub lmmse: Vec<f64>,
    /// `E |x(t) - xhat(t)|^2` of the scheme's own decoder.
    pub decoder_mse: Vec<f64>,
    /// `E xcheck(t)^2`, the error the transmitter sends.
    pub sigma2: Vec<f64>,
    /// `Var x(t)`.
    pub open_loop: Vec<f64>,
    /// `E z(t)^2` for `t = 1..T`.
    pub zpow: Vec<f64>,
    /// Covariance of `(y(1), ..., y(T-1))`, row-major.
    pub output_covariance: Vec<Vec<f64>>,
}

impl OracleResult {
    pub fn average_lmmse(&self) -> f64 {
        self.lmmse.iter().sum::<f64>() / self.lmmse.len() as f64
    }
}

type Form = DVector<f64>;

/// Part of `target` explained by the span of `rows`.
fn project(target: &Form, rows: &[Form]) -> Form {
    if rows.is_empty() {
        return Form::zeros(target.len());
    }
    let g = DMatrix::from_columns(rows);
    let gram = g.transpose() * &g;
    let cross = g.transpose() * target;
    let pinv = gram.pseudo_inverse(PINV_EPS).expect("eps is non-negative");
    g * (pinv * cross)
}

struct Basis {
    horizon: usize,
}

impl Basis {
    fn block(&self) -> usize {
        self.horizon + 1
    }

    fn dim(&self) -> usize {
        1 + 4 * self.block()
    }

    fn unit(&self, i: usize) -> Form {
        let mut f = Form::zeros(self.dim());
        f[i] = 1.0;
        f
    }

    fn x0(&self) -> Form {
        self.unit(0)
    }
    fn w(&self, t: usize) -> Form {
        self.unit(1 + t)
    }
    fn v(&self, t: usize) -> Form {
        self.unit(1 + self.block() + t)
    }
    fn n(&self, t: usize) -> Form {
        self.unit(1 + 2 * self.block() + t)
    }
    fn n_f(&self, t: usize) -> Form {
        self.unit(1 + 3 * self.block() + t)
    }
}

/// Plant noise `w(t)` and measurement noise `v(t)` with the measurement
/// model's joint covariance (lower Cholesky factor).
fn plant_noise(basis: &Basis, m: Option<&MeasurementModel>, t: usize) -> (Form, Form) {
    match m {
        None => (basis.w(t), Form::zeros(basis.dim())),
        Some(m) => {
            let (ww, wv, vv) = (m.v_ww()[t], m.v_wv()[t], m.v_vv()[t]);
            let l11 = ww.sqrt();
            let l21 = if l11 > 0.0 { wv / l11 } else { 0.0 };
            let l22 = (vv - l21 * l21).max(0.0).sqrt();
            (basis.w(t) * l11, basis.w(t) * l21 + basis.v(t) * l22)
        }
    }
}

/// Unrolls `kind` over `T <= 12` steps and conditions exactly.
pub fn exact_conditioning_oracle(
    s: &SystemSchedule,
    measurement: Option<&MeasurementModel>,
    kind: RegimeKind,
    perturbation: Option<EncoderPerturbation>,
) -> Result<OracleResult> {
    kind.check(s, measurement)?;
    let horizon = s.horizon();
    if horizon > ORACLE_MAX_HORIZON {
        return Err(Error::HorizonTooLarge {
            horizon,
            max: ORACLE_MAX_HORIZON,
        });
    }
    if let Some(p) = perturbation {
        if p.step == 0 || p.step >= horizon {
            return Err(Error::PerturbationStep { step: p.step, horizon });
        }
    }
    let separation = kind == RegimeKind::SeparationOutputFeedback;
    let m = if separation { measurement } else { None };
    let basis = Basis { horizon };
    let zero = Form::zeros(basis.dim());

    // plant, and what the transmitter knows of it
    let mut x = vec![basis.x0() * s.initial_variance().sqrt()];
    let mut gamma = Vec::new();
    let mut input = Vec::new();
    for t in 0..=horizon {
        let (w, v) = plant_noise(&basis, m, t);
        if let Some(m) = m {
            gamma.push(&x[t] * m.c + v * m.d);
        }
        if t < horizon {
            x.push(&x[t] * s.a()[t] + w * s.b()[t]);
        }
        input.push(if separation { project(&x[t], &gamma) } else { x[t].clone() });
    }

    let mut out = OracleResult {
        lmmse: Vec::with_capacity(horizon),
        decoder_mse: Vec::with_capacity(horizon),
        sigma2: Vec::with_capacity(horizon),
        open_loop: Vec::with_capacity(horizon),
        zpow: Vec::with_capacity(horizon),
        output_covariance: Vec::new(),
    };
    let mut ys: Vec<Form> = Vec::new();
    let mut xhat = zero.clone();
    // s(t), the decoder replica, or xcheck(t), depending on the regime
    let mut enc = match kind {
        RegimeKind::StateEstimateFeedback => input[1].clone(),
        _ => zero.clone(),
    };

    for t in 1..=horizon {
        let xcheck = match kind {
            RegimeKind::StateEstimateFeedback => enc.clone(),
            _ => &input[t] - &enc,
        };
        let sigma2 = xcheck.norm_squared();
        out.sigma2.push(sigma2);
        out.open_loop.push(x[t].norm_squared());
        out.decoder_mse.push((&x[t] - &xhat).norm_squared());
        out.lmmse.push((&x[t] - project(&x[t], &ys)).norm_squared());
        if t == horizon {
            break;
        }

        let p = s.step(t);
        let u = match perturbation {
            Some(pert) if pert.step == t => &xcheck + &input[t] * (pert.factor - 1.0),
            _ => xcheck.clone(),
        };
        let norm = u.norm();
        let z = if norm > 0.0 { u * (p.power.sqrt() / norm) } else { zero.clone() };
        out.zpow.push(z.norm_squared());
        let y = &z + basis.n(t) * p.noise.sqrt();
        let phi = match kind {
            RegimeKind::StateEstimateFeedback => &xhat,
            _ => &y,
        };
        let y_f = if p.feedback_noise.is_finite() {
            phi + basis.n_f(t) * p.feedback_noise.sqrt()
        } else {
            zero.clone()
        };
        let k = p.a * sigma2.sqrt() * p.power.sqrt() / (p.power + p.noise);

        enc = match kind {
            RegimeKind::NoiselessFeedback => &enc * p.a + &y_f * k,
            RegimeKind::StateEstimateFeedback => {
                let sigbar2 = (&x[t] - &xcheck - &xhat).norm_squared();
                let g = if sigbar2 > 0.0 {
                    p.a * sigbar2 / (sigbar2 + p.feedback_noise)
                } else {
                    0.0
                };
                &xcheck * p.a - &z * k + &x[t + 1] - &x[t] * p.a + (&x[t] - &xcheck - &y_f) * g
            }
            _ => {
                let nhat = if p.feedback_noise.is_finite() {
                    (&y_f - &z) * (p.noise / (p.noise + p.feedback_noise))
                } else {
                    zero.clone()
                };
                &enc * p.a + (&z + nhat) * k
            }
        };
        xhat = &xhat * p.a + &y * k;
        ys.push(y);
    }

    out.output_covariance = ys
        .iter()
        .map(|yi| ys.iter().map(|yj| yi.dot(yj)).collect())
        .collect();
    Ok(out)
}
