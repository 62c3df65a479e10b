//! Seeded Monte Carlo harness and the exact conditioning oracle.

pub mod oracle;
pub mod rng;

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MeasurementModel, SystemSchedule, TrajectoryRecord, VariancePrediction};
use crate::recursions::ResidualRecursion;
use crate::schemes::{PreparedScheme, RegimeKind};

pub use oracle::{exact_conditioning_oracle, EncoderPerturbation, OracleResult, ORACLE_MAX_HORIZON};
pub use rng::{sample_gaussian_streams, trial_streams};

/// Caps the worker threads used by [`monte_carlo`].
pub const THREADS_ENV: &str = "FBCOMM_THREADS";
/// Trials per work unit. Fixed so that the reduction order, and hence the
/// floating-point result, does not depend on the thread count.
const CHUNK: usize = 512;

pub const CSV_HEADER: &str = "t,pred_sigma2,pred_vbar,pred_mse,emp_mse,emp_se,emp_zpow";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    pub record_trajectories: bool,
}

impl McConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            record_trajectories: false,
        }
    }
}

/// Sample mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    fn stats(&self) -> StepStats {
        let variance = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            f64::NAN
        };
        StepStats {
            mean: self.mean,
            variance,
            se: (variance / self.n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
struct Accumulator {
    sq_err: Vec<Welford>,
    zpow: Vec<Welford>,
    trajectories: Vec<TrajectoryRecord>,
}

impl Accumulator {
    fn new(horizon: usize) -> Self {
        Self {
            sq_err: vec![Welford::default(); horizon],
            zpow: vec![Welford::default(); horizon.saturating_sub(1)],
            trajectories: Vec::new(),
        }
    }

    fn push(&mut self, rec: TrajectoryRecord, keep: bool) {
        for (acc, e) in self.sq_err.iter_mut().zip(&rec.sq_err[1..]) {
            acc.push(*e);
        }
        for (acc, z) in self.zpow.iter_mut().zip(&rec.z[1..]) {
            acc.push(z * z);
        }
        if keep {
            self.trajectories.push(rec);
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        for (a, b) in self.sq_err.iter_mut().zip(&other.sq_err) {
            a.merge(b);
        }
        for (a, b) in self.zpow.iter_mut().zip(&other.zpow) {
            a.merge(b);
        }
        self.trajectories.extend(other.trajectories);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub regime: RegimeKind,
    pub trials: usize,
    pub seed: u64,
    pub prediction: VariancePrediction,
    /// `(x(t) - xhat(t))^2` for `t = 1..=T`.
    pub sq_err: Vec<StepStats>,
    /// `z(t)^2` for the transmissions `t = 1..T`.
    pub zpow: Vec<StepStats>,
    /// Empirical minus predicted MSE per step.
    pub delta: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectories: Vec<TrajectoryRecord>,
}

impl McSummary {
    /// Largest `|emp_mse - pred_mse| / emp_se` over all steps with a
    /// non-zero standard error.
    pub fn max_mse_z_score(&self) -> f64 {
        self.delta
            .iter()
            .zip(&self.sq_err)
            .filter(|(_, s)| s.se > 0.0)
            .map(|(d, s)| d.abs() / s.se)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let p = &self.prediction;
        for i in 0..p.len() {
            let zpow = self.zpow.get(i).map(|s| fmt_f64(s.mean)).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                i + 1,
                fmt_f64(p.sigma2[i]),
                fmt_f64(p.vbar[i]),
                fmt_f64(p.mse[i]),
                fmt_f64(self.sq_err[i].mean),
                fmt_f64(self.sq_err[i].se),
                zpow
            )?;
        }
        Ok(())
    }
}

/// Floats in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// The prediction alone, with the empirical columns left empty.
pub fn write_prediction_csv<W: Write>(p: &VariancePrediction, w: &mut W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for i in 0..p.len() {
        writeln!(
            w,
            "{},{},{},{},,,",
            i + 1,
            fmt_f64(p.sigma2[i]),
            fmt_f64(p.vbar[i]),
            fmt_f64(p.mse[i])
        )?;
    }
    Ok(())
}

/// Runs `f` on a pool capped by [`THREADS_ENV`], or on the global pool.
fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Runs `cfg.trials` independent trajectories and aggregates them. The result
/// is bitwise reproducible for a fixed `cfg`, independent of thread count.
pub fn monte_carlo(
    schedule: &SystemSchedule,
    measurement: Option<&MeasurementModel>,
    kind: RegimeKind,
    cfg: &McConfig,
    form: ResidualRecursion,
) -> Result<McSummary> {
    if cfg.trials == 0 {
        return Err(Error::NoTrials);
    }
    let scheme = PreparedScheme::new(kind, schedule, measurement, form)?;
    let horizon = schedule.horizon();
    let chunks = cfg.trials.div_ceil(CHUNK);

    let partials: Vec<Result<Accumulator>> = with_thread_cap(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = Accumulator::new(horizon);
                for trial in (c * CHUNK) as u64..((c + 1) * CHUNK).min(cfg.trials) as u64 {
                    let streams = trial_streams(cfg.seed, trial, horizon);
                    let rec = scheme.run(&streams, cfg.seed, trial)?;
                    acc.push(rec, cfg.record_trajectories);
                }
                Ok(acc)
            })
            .collect()
    });
    let mut total = Accumulator::new(horizon);
    for part in partials {
        total = total.merge(part?);
    }

    let prediction = scheme.prediction().clone();
    let sq_err: Vec<StepStats> = total.sq_err.iter().map(Welford::stats).collect();
    let delta = sq_err.iter().zip(&prediction.mse).map(|(s, p)| s.mean - p).collect();
    Ok(McSummary {
        regime: kind,
        trials: cfg.trials,
        seed: cfg.seed,
        prediction,
        sq_err,
        zpow: total.zpow.iter().map(Welford::stats).collect(),
        delta,
        trajectories: total.trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut seq = Welford::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut left = Welford::default();
        let mut right = Welford::default();
        xs[..313].iter().for_each(|&x| left.push(x));
        xs[313..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        assert_eq!(left.n, seq.n);
        assert!((left.mean - seq.mean).abs() < 1e-12);
        assert!((left.m2 - seq.m2).abs() < 1e-9);
    }

    #[test]
    fn unbiased_variance() {
        let mut w = Welford::default();
        [1.0, 2.0, 3.0, 4.0].iter().for_each(|&x| w.push(x));
        let s = w.stats();
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.se - (5.0 / 12.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_trials_rejected() {
        let s = SystemSchedule::constant(3, 0.5, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let cfg = McConfig::new(0, 1);
        assert_eq!(
            monte_carlo(&s, None, RegimeKind::NoiselessFeedback, &cfg, ResidualRecursion::default()),
            Err(Error::NoTrials)
        );
    }

    #[test]
    fn recorded_trajectories_in_trial_order() {
        let s = SystemSchedule::constant(4, 0.5, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let cfg = McConfig {
            trials: 1030,
            seed: 9,
            record_trajectories: true,
        };
        let m = monte_carlo(&s, None, RegimeKind::NoiselessFeedback, &cfg, ResidualRecursion::default()).unwrap();
        assert_eq!(m.trajectories.len(), 1030);
        assert!(m.trajectories.iter().enumerate().all(|(i, r)| r.trial == i as u64 && r.seed == 9));
    }

    #[test]
    fn csv_layout() {
        let s = SystemSchedule::constant(3, 0.5, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let m = monte_carlo(&s, None, RegimeKind::NoiselessFeedback, &McConfig::new(10, 1), ResidualRecursion::default()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(','));
        assert_eq!(lines[1].split(',').count(), 7);
    }

    #[test]
    fn float_format_round_trips() {
        for x in [8.0 / 7.0, 1e-300, -3.5e12, 0.1 + 0.2] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
