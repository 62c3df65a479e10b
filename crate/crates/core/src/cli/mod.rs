//! Experiment runner behind the `fbcomm` binary.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid config or parameters,
//! 3 when the stationarity solver reports non-convergence.

mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentSpec, Mode, Overrides};

use crate::error::Error;
use crate::schemes::{predict, RegimeKind};
use crate::simulate::{
    exact_conditioning_oracle, fmt_f64, monte_carlo, write_prediction_csv, McConfig, OracleResult,
    CSV_HEADER, ORACLE_MAX_HORIZON,
};
use crate::stationarity::{self, SolverStatus, StationaryReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    Validation(#[from] Error),
    #[error("stationarity solver did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

/// Files written and a one-line summary for the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub message: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_artifact(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    Ok(path)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn run(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    let s = &spec.schedule;
    let m = spec.measurement.as_ref();
    match spec.mode {
        Mode::Predict => {
            let pred = predict(spec.regime, s, m, spec.form)?;
            let path = write_artifact(&spec.output, "prediction.csv", |w| write_prediction_csv(&pred, w))?;
            Ok(Outcome {
                message: format!("{}: final mse {}", spec.regime, fmt_f64(pred.last_mse())),
                artifacts: vec![path],
            })
        }
        Mode::Simulate => {
            let cfg = McConfig::new(spec.require_trials()?, spec.require_seed()?);
            let summary = monte_carlo(s, m, spec.regime, &cfg, spec.form)?;
            let path = write_artifact(&spec.output, "summary.csv", |w| summary.write_csv(w))?;
            Ok(Outcome {
                message: format!(
                    "{}: {} trials, max |emp_mse - pred_mse| / emp_se = {:.3}",
                    spec.regime,
                    cfg.trials,
                    summary.max_mse_z_score()
                ),
                artifacts: vec![path],
            })
        }
        Mode::Stationarity => {
            let report = stationarity::check(spec.regime, s, spec.form)?;
            let path = write_artifact(&spec.output, "stationarity.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                writeln!(w)
            })?;
            if report.solver == Some(SolverStatus::Stalled) {
                return Err(CliError::NotConverged(report.condition));
            }
            Ok(Outcome {
                message: format!("{}: bounded = {} ({})", report.regime, report.bounded, report.condition),
                artifacts: vec![path],
            })
        }
        Mode::Oracle => {
            let pred = predict(spec.regime, s, m, spec.form)?;
            let oracle = exact_conditioning_oracle(s, m, spec.regime, None)?;
            let path = write_artifact(&spec.output, "oracle.csv", |w| {
                writeln!(w, "t,pred_sigma2,pred_vbar,pred_mse,oracle_lmmse,oracle_decoder_mse,oracle_sigma2,open_loop")?;
                for i in 0..pred.len() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        i + 1,
                        fmt_f64(pred.sigma2[i]),
                        fmt_f64(pred.vbar[i]),
                        fmt_f64(pred.mse[i]),
                        fmt_f64(oracle.lmmse[i]),
                        fmt_f64(oracle.decoder_mse[i]),
                        fmt_f64(oracle.sigma2[i]),
                        fmt_f64(oracle.open_loop[i])
                    )?;
                }
                Ok(())
            })?;
            Ok(Outcome {
                message: format!(
                    "{}: max |oracle_lmmse - pred_mse| = {:e}, max |oracle_decoder_mse - pred_mse| = {:e}",
                    spec.regime,
                    max_abs_diff(&oracle.lmmse, &pred.mse),
                    max_abs_diff(&oracle.decoder_mse, &pred.mse)
                ),
                artifacts: vec![path],
            })
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Joins prediction, Monte Carlo and (for `T <= 12`) the oracle into
/// `compare.csv`, and evaluates the `N_f` sweep into `sweep.csv` when one is
/// configured.
pub fn compare(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    if spec.mode != Mode::Simulate {
        return Err(CliError::Config("compare requires mode = \"simulate\"".into()));
    }
    if matches!(&spec.sweep_nf, Some(v) if v.is_empty()) {
        return Err(CliError::Config("compare.sweep_nf is empty".into()));
    }
    let s = &spec.schedule;
    let m = spec.measurement.as_ref();
    let cfg = McConfig::new(spec.require_trials()?, spec.require_seed()?);
    let summary = monte_carlo(s, m, spec.regime, &cfg, spec.form)?;
    let oracle: Option<OracleResult> = if s.horizon() <= ORACLE_MAX_HORIZON {
        Some(exact_conditioning_oracle(s, m, spec.regime, None)?)
    } else {
        None
    };
    let pred = &summary.prediction;

    let mut artifacts = vec![write_artifact(&spec.output, "compare.csv", |w| {
        writeln!(w, "{CSV_HEADER},oracle_lmmse,oracle_decoder_mse")?;
        for i in 0..pred.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                i + 1,
                fmt_f64(pred.sigma2[i]),
                fmt_f64(pred.vbar[i]),
                fmt_f64(pred.mse[i]),
                fmt_f64(summary.sq_err[i].mean),
                fmt_f64(summary.sq_err[i].se),
                opt(summary.zpow.get(i).map(|z| z.mean)),
                opt(oracle.as_ref().map(|o| o.lmmse[i])),
                opt(oracle.as_ref().map(|o| o.decoder_mse[i]))
            )?;
        }
        Ok(())
    })?];

    let mut message = format!(
        "{}: max |emp_mse - pred_mse| / emp_se = {:.3}",
        spec.regime,
        summary.max_mse_z_score()
    );
    if let Some(o) = &oracle {
        message += &format!(
            ", max |oracle_decoder_mse - pred_mse| = {:e}, max |oracle_lmmse - pred_mse| = {:e}",
            max_abs_diff(&o.decoder_mse, &pred.mse),
            max_abs_diff(&o.lmmse, &pred.mse)
        );
    }

    if let Some(values) = &spec.sweep_nf {
        let rows = sweep_feedback_noise(spec, values)?;
        artifacts.push(write_artifact(&spec.output, "sweep.csv", |w| {
            writeln!(w, "N_f,bounded,sigma2,vbar,mse")?;
            for (nf, r) in &rows {
                let fp = r.fixed_point;
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(*nf),
                    r.bounded,
                    opt(fp.map(|p| p.sigma2)),
                    opt(fp.map(|p| p.sigbar2)),
                    opt(fp.map(|p| p.mse))
                )?;
            }
            Ok(())
        })?);
    }

    Ok(Outcome { artifacts, message })
}

/// Stationary report for each feedback noise level, with the rest of the
/// (constant) schedule held fixed.
pub fn sweep_feedback_noise(
    spec: &ExperimentSpec,
    values: &[f64],
) -> Result<Vec<(f64, StationaryReport)>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("compare.sweep_nf is empty".into()));
    }
    values
        .iter()
        .map(|&nf| {
            let s = spec.schedule.with_feedback_noise(nf)?;
            let report = match spec.regime {
                RegimeKind::StateEstimateFeedback => stationarity::solve_state_estimate_fp(&s, spec.form)?,
                _ => stationarity::check_output_fb(&s)?,
            };
            Ok((nf, report))
        })
        .collect()
}
