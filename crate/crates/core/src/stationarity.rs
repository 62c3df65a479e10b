//! Boundedness tests and stationary fixed points for constant schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cov2, StepParams, SystemSchedule};
use crate::recursions::{
    feedback_estimate_variance, innovation_residual_variance, output_fb_step, state_estimate_step,
    ResidualRecursion,
};
use crate::schemes::RegimeKind;

/// Iterates beyond this magnitude count as divergence.
pub const DIVERGENCE_CEILING: f64 = 1e12;
pub const MAX_ITERATIONS: usize = 100_000;
/// Weight of the new iterate in the damped fixed-point iteration.
pub const DAMPING: f64 = 0.5;
/// Largest stationary-equation defect accepted for a reported fixed point.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// `C = 1/2 log2(1 + P/N)` in bits per channel use.
pub fn channel_capacity(power: f64, noise: f64) -> f64 {
    0.5 * (power / noise).ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub sigma2: f64,
    pub sigbar2: f64,
    pub mse: f64,
}

impl FixedPoint {
    fn new(sigma2: f64, sigbar2: f64) -> Self {
        Self {
            sigma2,
            sigbar2,
            mse: sigma2 + sigbar2,
        }
    }
}

/// Outcome of the iterative solver. Closed-form checks leave it unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    Diverged,
    /// Neither converged nor diverged within the iteration budget, or the
    /// polished point missed the residual tolerance.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub regime: RegimeKind,
    pub bounded: bool,
    pub condition: String,
    pub fixed_point: Option<FixedPoint>,
    /// Absolute defects of the stationary equations at `fixed_point`.
    pub residuals: Vec<f64>,
    pub capacity: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solver: Option<SolverStatus>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
    /// Other non-negative stationary points found by scanning; the
    /// iteration's root in `fixed_point` is the operational one.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub alternate_roots: Vec<FixedPoint>,
}

impl StationaryReport {
    fn closed_form(regime: RegimeKind, p: &StepParams, bounded: bool, condition: String) -> Self {
        Self {
            regime,
            bounded,
            condition,
            fixed_point: None,
            residuals: Vec::new(),
            capacity: channel_capacity(p.power, p.noise),
            solver: None,
            iterations: None,
            alternate_roots: Vec::new(),
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Noiseless feedback: bounded iff `log2|a| < C`, with
/// `sigma^2 = b^2 / (1 - a^2 N/(N+P))`.
pub fn check_noiseless(s: &SystemSchedule) -> Result<StationaryReport> {
    let p = s.constant_params()?;
    let capacity = channel_capacity(p.power, p.noise);
    let bounded = p.a.abs().log2() < capacity;
    let condition = format!(
        "log2|a| < C: log2|{}| = {} vs C = {}",
        p.a,
        p.a.abs().log2(),
        capacity
    );
    let mut report = StationaryReport::closed_form(RegimeKind::NoiselessFeedback, &p, bounded, condition);
    if bounded {
        let contraction = p.a * p.a * p.noise / (p.noise + p.power);
        let sigma2 = p.b * p.b / (1.0 - contraction);
        let defect = contraction * sigma2 + p.b * p.b - sigma2;
        report.fixed_point = Some(FixedPoint::new(sigma2, 0.0));
        report.residuals = vec![defect.abs()];
    }
    Ok(report)
}

/// Output feedback with constant `N_f`. `N_f = 0` is delegated to
/// [`check_noiseless`]. Otherwise the variance map on
/// `(V_xx, V_sx, V_ss, vbar)` is affine and lower triangular with spectral
/// radius `a^2`, so the regime is bounded iff `|a| < 1`, `N_f = +inf`
/// included.
pub fn check_output_fb(s: &SystemSchedule) -> Result<StationaryReport> {
    let p = s.constant_params()?;
    if p.feedback_noise == 0.0 {
        return check_noiseless(s);
    }
    let regime = if p.feedback_noise.is_infinite() {
        RegimeKind::NoFeedback
    } else {
        RegimeKind::OutputFeedback
    };
    let pn = p.power + p.noise;
    let alpha = p.a * p.noise / pn;
    let beta = p.a * p.power / pn;
    let q = p.a * p.a * p.power / (pn * pn);
    let drive = q * feedback_estimate_variance(p.noise, p.feedback_noise);
    let radius = (p.a * p.a).max(alpha * alpha + drive);
    let bounded = radius < 1.0;
    let condition = format!("|a| < 1: spectral radius of the variance map = {radius}");
    let mut report = StationaryReport::closed_form(regime, &p, bounded, condition);
    if !bounded {
        return Ok(report);
    }

    let xx = p.b * p.b / (1.0 - p.a * p.a);
    let sx = beta * p.a * xx / (1.0 - alpha * p.a);
    let ss = (2.0 * alpha * beta * sx + beta * beta * xx + drive * (xx - 2.0 * sx))
        / (1.0 - alpha * alpha - drive);
    let cov = Cov2::new(ss, sx, xx);
    let sigma2 = cov.sigma2();
    let vbar = q * innovation_residual_variance(p.noise, p.feedback_noise) * sigma2 / (1.0 - p.a * p.a);

    let (next, vbar_next) = output_fb_step(cov, vbar, &p);
    report.residuals = vec![
        (next.xx - xx).abs(),
        (next.sx - sx).abs(),
        (next.ss - ss).abs(),
        (vbar_next - vbar).abs(),
    ];
    report.fixed_point = Some(FixedPoint::new(sigma2, vbar));
    Ok(report)
}

/// Stationary equations of state-estimate feedback with their Jacobian.
struct StateEstimateMap {
    p: StepParams,
    form: ResidualRecursion,
}

impl StateEstimateMap {
    fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        state_estimate_step(u, v, &self.p, self.form)
    }

    fn residual(&self, u: f64, v: f64) -> (f64, f64) {
        let (fu, fv) = self.apply(u, v);
        (fu - u, fv - v)
    }

    fn jacobian(&self, v: f64) -> [[f64; 2]; 2] {
        let StepParams {
            a,
            power,
            noise,
            feedback_noise: nf,
            ..
        } = self.p;
        let a2 = a * a;
        let pn2 = (power + noise) * (power + noise);
        let d = v + nf;
        let (d1v, d2v) = if d > 0.0 {
            (a2 * (v * v + 2.0 * v * nf) / (d * d), a2 * nf * nf / (d * d))
        } else {
            (a2, 0.0)
        };
        let d2v = match self.form {
            ResidualRecursion::StateEquations => d2v,
            ResidualRecursion::SquaredFeedbackNoise => nf * d2v,
        };
        [
            [a2 * noise * noise / pn2, d1v],
            [a2 * power * noise / pn2, d2v],
        ]
    }

    /// Newton steps on `F(p) - p = 0`.
    fn polish(&self, mut u: f64, mut v: f64) -> (f64, f64) {
        for _ in 0..50 {
            let (g1, g2) = self.residual(u, v);
            if g1.abs().max(g2.abs()) <= f64::EPSILON * (1.0 + u.abs() + v.abs()) {
                break;
            }
            let j = self.jacobian(v);
            let (j11, j12, j21, j22) = (j[0][0] - 1.0, j[0][1], j[1][0], j[1][1] - 1.0);
            let det = j11 * j22 - j12 * j21;
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let du = (g1 * j22 - g2 * j12) / det;
            let dv = (j11 * g2 - j21 * g1) / det;
            let (nu, nv) = ((u - du).max(0.0), (v - dv).max(0.0));
            if (nu, nv) == (u, v) {
                break;
            }
            (u, v) = (nu, nv);
        }
        (u, v)
    }

    /// `sigma^2` as a function of `sigbar^2` from the first stationary
    /// equation, if that equation can be solved for it.
    fn sigma2_given(&self, v: f64) -> Option<f64> {
        let [[c1, _], _] = self.jacobian(v);
        if c1 >= 1.0 {
            return None;
        }
        let (fu, _) = self.apply(0.0, v);
        Some(fu / (1.0 - c1))
    }

    /// Sign changes of the substituted scalar equation on a log grid.
    fn scan_roots(&self) -> Vec<(f64, f64)> {
        let g = |v: f64| self.sigma2_given(v).map(|u| self.apply(u, v).1 - v);
        let mut grid = vec![0.0];
        grid.extend((0..=2400).map(|i| 10f64.powf(-12.0 + 24.0 * i as f64 / 2400.0)));
        let mut roots = Vec::new();
        for w in grid.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (Some(glo), Some(ghi)) = (g(lo), g(hi)) else { continue };
            if glo == 0.0 {
                roots.push(lo);
            } else if glo.signum() != ghi.signum() && ghi != 0.0 {
                let (mut l, mut h, mut gl) = (lo, hi, glo);
                for _ in 0..200 {
                    let m = 0.5 * (l + h);
                    let Some(gm) = g(m) else { break };
                    if gm.signum() == gl.signum() {
                        (l, gl) = (m, gm);
                    } else {
                        h = m;
                    }
                }
                roots.push(0.5 * (l + h));
            }
        }
        roots
            .into_iter()
            .filter_map(|v| self.sigma2_given(v).map(|u| self.polish(u, v)))
            .collect()
    }
}

/// State-estimate feedback: damped iteration of the time recursion from
/// `(0, 0)`, Newton polish, and a scan for further stationary points.
pub fn solve_state_estimate_fp(s: &SystemSchedule, form: ResidualRecursion) -> Result<StationaryReport> {
    let p = s.constant_params()?;
    if !p.feedback_noise.is_finite() {
        return Err(Error::RegimeMismatch {
            regime: RegimeKind::StateEstimateFeedback.name(),
            requirement: "finite N_f",
        });
    }
    let map = StateEstimateMap { p, form };
    let mut report = StationaryReport::closed_form(
        RegimeKind::StateEstimateFeedback,
        &p,
        false,
        String::new(),
    );

    let (mut u, mut v) = (0.0, 0.0);
    let mut status = SolverStatus::Stalled;
    let mut iterations = MAX_ITERATIONS;
    for k in 1..=MAX_ITERATIONS {
        let (fu, fv) = map.apply(u, v);
        let (nu, nv) = (u + DAMPING * (fu - u), v + DAMPING * (fv - v));
        if !(nu.is_finite() && nv.is_finite()) || nu.max(nv) > DIVERGENCE_CEILING {
            status = SolverStatus::Diverged;
            iterations = k;
            break;
        }
        let step = (nu - u).abs().max((nv - v).abs());
        (u, v) = (nu, nv);
        if step <= 1e-14 * (1.0 + u + v) {
            status = SolverStatus::Converged;
            iterations = k;
            break;
        }
    }

    if status == SolverStatus::Converged {
        (u, v) = map.polish(u, v);
        let (g1, g2) = map.residual(u, v);
        report.residuals = vec![g1.abs(), g2.abs()];
        if report.max_residual() < RESIDUAL_TOLERANCE {
            report.bounded = true;
            report.fixed_point = Some(FixedPoint::new(u, v));
            report.alternate_roots = map
                .scan_roots()
                .into_iter()
                .filter(|&(ru, rv)| {
                    let (g1, g2) = map.residual(ru, rv);
                    g1.abs().max(g2.abs()) < RESIDUAL_TOLERANCE
                        && (ru - u).abs().max((rv - v).abs()) > 1e-6 * (1.0 + u + v)
                })
                .fold(Vec::new(), |mut acc: Vec<FixedPoint>, (ru, rv)| {
                    let dup = acc
                        .iter()
                        .any(|r| (r.sigma2 - ru).abs().max((r.sigbar2 - rv).abs()) <= 1e-6 * (1.0 + ru + rv));
                    if !dup {
                        acc.push(FixedPoint::new(ru, rv));
                    }
                    acc
                });
        } else {
            status = SolverStatus::Stalled;
        }
    }

    report.condition = match status {
        SolverStatus::Converged => format!("fixed-point iteration converged after {iterations} iterations"),
        SolverStatus::Diverged => format!("iterates exceeded {DIVERGENCE_CEILING:e} after {iterations} iterations"),
        SolverStatus::Stalled => format!(
            "no fixed point within {MAX_ITERATIONS} iterations and residual tolerance {RESIDUAL_TOLERANCE:e}"
        ),
    };
    report.solver = Some(status);
    report.iterations = Some(iterations);
    Ok(report)
}

/// Dispatches to the check matching `kind`.
pub fn check(kind: RegimeKind, s: &SystemSchedule, form: ResidualRecursion) -> Result<StationaryReport> {
    kind.check(s, None).or_else(|e| match kind {
        RegimeKind::SeparationOutputFeedback => Ok(()),
        _ => Err(e),
    })?;
    match kind {
        RegimeKind::NoiselessFeedback => check_noiseless(s),
        RegimeKind::StateEstimateFeedback => solve_state_estimate_fp(s, form),
        // the pre-filter only changes the driving noise of the scheme, not
        // the stability of its variance map
        RegimeKind::OutputFeedback | RegimeKind::NoFeedback | RegimeKind::SeparationOutputFeedback => {
            check_output_fb(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recursions::{predict_output_fb, predict_state_estimate_fb};

    fn sched(a: f64, b: f64, p: f64, n: f64, nf: f64) -> SystemSchedule {
        SystemSchedule::constant(1, a, b, p, n, nf, 0.0).unwrap()
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(channel_capacity(3.0, 1.0), 1.0);
        assert_eq!(channel_capacity(1.0, 1.0), 0.5);
        let tiny = channel_capacity(1e-300, 1.0);
        assert!(tiny > 0.0 && tiny < 1e-299);
    }

    #[test]
    fn noiseless_threshold() {
        assert!(!check_noiseless(&sched(2.0, 1.0, 3.0, 1.0, 0.0)).unwrap().bounded);
        assert!(check_noiseless(&sched(1.9, 1.0, 3.0, 1.0, 0.0)).unwrap().bounded);
        let r = check_noiseless(&sched(0.5, 1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((r.fixed_point.unwrap().sigma2 - 8.0 / 7.0).abs() < 1e-15);
        assert!(r.max_residual() < 1e-15);
    }

    #[test]
    fn output_fb_dichotomy() {
        let r = check_output_fb(&sched(0.99, 1.0, 1.0, 1.0, 0.1)).unwrap();
        assert!(r.bounded && r.max_residual() < RESIDUAL_TOLERANCE);
        assert!(!check_output_fb(&sched(1.0, 1.0, 1.0, 1.0, 0.1)).unwrap().bounded);
        assert!(!check_output_fb(&sched(1.0, 1.0, 1.0, 1.0, f64::INFINITY)).unwrap().bounded);
        assert!(check_output_fb(&sched(-0.99, 1.0, 1.0, 1.0, f64::INFINITY)).unwrap().bounded);
    }

    #[test]
    fn output_fb_zero_feedback_noise_delegates() {
        let s = sched(1.5, 1.0, 3.0, 1.0, 0.0);
        assert_eq!(check_output_fb(&s).unwrap(), check_noiseless(&s).unwrap());
    }

    #[test]
    fn output_fb_fixed_point_matches_iteration() {
        for nf in [0.1, 1.0, f64::INFINITY] {
            let s = SystemSchedule::constant(10_000, 0.9, 1.0, 1.0, 1.0, nf, 1.0).unwrap();
            let fp = check_output_fb(&s).unwrap().fixed_point.unwrap();
            let pred = predict_output_fb(&s);
            assert!((pred.sigma2.last().unwrap() - fp.sigma2).abs() < 1e-8);
            assert!((pred.vbar.last().unwrap() - fp.sigbar2).abs() < 1e-8);
        }
    }

    #[test]
    fn non_constant_rejected() {
        let s = SystemSchedule::constant(3, 0.9, 1.0, 1.0, 1.0, 0.1, 1.0).unwrap();
        let mut spec = s.to_spec();
        spec.a = vec![0.9, 0.8, 0.9].into();
        let s = crate::model::validate_schedule(&spec).unwrap();
        assert!(matches!(check_output_fb(&s), Err(Error::NonConstant { name: "a" })));
    }

    #[test]
    fn state_estimate_fixed_point_matches_iteration() {
        let s = SystemSchedule::constant(10_000, 0.9, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let r = solve_state_estimate_fp(&s, ResidualRecursion::default()).unwrap();
        assert_eq!(r.solver, Some(SolverStatus::Converged));
        assert!(r.max_residual() < RESIDUAL_TOLERANCE);
        let fp = r.fixed_point.unwrap();
        let pred = predict_state_estimate_fb(&s, ResidualRecursion::default()).unwrap();
        assert!((pred.sigma2.last().unwrap() - fp.sigma2).abs() < 1e-8);
        assert!((pred.vbar.last().unwrap() - fp.sigbar2).abs() < 1e-8);
    }

    #[test]
    fn state_estimate_memoryless_plant() {
        let r = solve_state_estimate_fp(&sched(0.0, 1.5, 1.0, 1.0, 0.5), ResidualRecursion::default()).unwrap();
        let fp = r.fixed_point.unwrap();
        assert_eq!((fp.sigma2, fp.sigbar2), (2.25, 0.0));
    }

    #[test]
    fn state_estimate_divergence() {
        let r = solve_state_estimate_fp(&sched(1.5, 1.0, 1.0, 1.0, 0.5), ResidualRecursion::default()).unwrap();
        assert!(!r.bounded);
        assert_eq!(r.solver, Some(SolverStatus::Diverged));
        assert!(r.fixed_point.is_none());
    }

    #[test]
    fn state_estimate_small_feedback_noise_is_continuous() {
        let form = ResidualRecursion::default();
        let at_zero = solve_state_estimate_fp(&sched(0.9, 1.0, 1.0, 1.0, 0.0), form).unwrap();
        let near = solve_state_estimate_fp(&sched(0.9, 1.0, 1.0, 1.0, 1e-8), form).unwrap();
        let (z, n) = (at_zero.fixed_point.unwrap(), near.fixed_point.unwrap());
        assert!((z.mse - n.mse).abs() < 1e-4);
    }

    #[test]
    fn state_estimate_rejects_infinite_feedback_noise() {
        assert!(solve_state_estimate_fp(&sched(0.5, 1.0, 1.0, 1.0, f64::INFINITY), ResidualRecursion::default()).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let r = check_noiseless(&sched(2.0, 1.0, 3.0, 1.0, 0.0)).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"bounded\":false"));
        assert!(json.contains("\"capacity\":1.0"));
        assert_eq!(serde_json::from_str::<StationaryReport>(&json).unwrap(), r);
    }
}
