//! TOML experiment manifests.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::model::{validate_schedule, MeasurementModel, MeasurementSpec, Param, ScheduleSpec, SystemSchedule};
use crate::recursions::ResidualRecursion;
use crate::schemes::RegimeKind;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Predict,
    Simulate,
    Stationarity,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FormKey {
    StateEquations,
    SquaredFeedbackNoise,
}

impl From<FormKey> for ResidualRecursion {
    fn from(k: FormKey) -> Self {
        match k {
            FormKey::StateEquations => ResidualRecursion::StateEquations,
            FormKey::SquaredFeedbackNoise => ResidualRecursion::SquaredFeedbackNoise,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleTable {
    #[serde(rename = "T")]
    horizon: usize,
    a: Param,
    b: Param,
    #[serde(rename = "P")]
    power: Param,
    #[serde(rename = "N")]
    noise: Param,
    #[serde(rename = "N_f")]
    feedback_noise: Param,
    #[serde(rename = "V_xx0")]
    initial_variance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementTable {
    c: f64,
    d: f64,
    #[serde(rename = "V_ww")]
    v_ww: Param,
    #[serde(rename = "V_wv")]
    v_wv: Param,
    #[serde(rename = "V_vv")]
    v_vv: Param,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunTable {
    regime: String,
    mode: Mode,
    trials: Option<usize>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    residual_form: Option<FormKey>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareTable {
    sweep_nf: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schedule: ScheduleTable,
    measurement: Option<MeasurementTable>,
    run: RunTable,
    compare: Option<CompareTable>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub regime: Option<RegimeKind>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub schedule: SystemSchedule,
    pub measurement: Option<MeasurementModel>,
    pub regime: RegimeKind,
    pub mode: Mode,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub form: ResidualRecursion,
    pub sweep_nf: Option<Vec<f64>>,
}

impl ExperimentSpec {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let st = file.schedule;
        let schedule = validate_schedule(&ScheduleSpec {
            horizon: st.horizon,
            a: st.a,
            b: st.b,
            power: st.power,
            noise: st.noise,
            feedback_noise: st.feedback_noise,
            initial_variance: st.initial_variance,
        })?;
        let measurement = file
            .measurement
            .map(|m| {
                MeasurementSpec {
                    c: m.c,
                    d: m.d,
                    v_ww: m.v_ww,
                    v_wv: m.v_wv,
                    v_vv: m.v_vv,
                }
                .validate(schedule.horizon())
            })
            .transpose()?;
        let regime = match overrides.regime {
            Some(r) => r,
            None => file.run.regime.parse().map_err(CliError::Config)?,
        };
        let spec = ExperimentSpec {
            schedule,
            measurement,
            regime,
            mode: overrides.mode.unwrap_or(file.run.mode),
            trials: overrides.trials.or(file.run.trials),
            seed: overrides.seed.or(file.run.seed),
            output: overrides
                .output
                .clone()
                .or(file.run.output)
                .unwrap_or_else(|| PathBuf::from(".")),
            form: file.run.residual_form.map(Into::into).unwrap_or_default(),
            sweep_nf: file.compare.and_then(|c| c.sweep_nf),
        };
        spec.regime.check(&spec.schedule, spec.measurement.as_ref())?;
        if spec.mode == Mode::Simulate {
            spec.require_trials()?;
            spec.require_seed()?;
        }
        Ok(spec)
    }

    pub(crate) fn require_trials(&self) -> Result<usize, CliError> {
        match self.trials {
            Some(0) => Err(CliError::Config("run.trials must be at least 1".into())),
            Some(n) => Ok(n),
            None => Err(CliError::Config("missing key `trials` in [run], required by mode simulate".into())),
        }
    }

    pub(crate) fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("missing key `seed` in [run], required by mode simulate".into()))
    }
}
