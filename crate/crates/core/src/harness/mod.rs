//! Experiment runner: configuration, seeding, parallel Monte-Carlo and CSV.
//!
//! An [`ExperimentSpec`] is assembled from [`Settings`], which accept the same
//! keys from a config file and from command-line flags (flags win).

mod csv;
mod experiments;
pub mod parse;
pub mod trial;

pub use csv::{write_csv, CsvRow, CSV_HEADER};
pub use experiments::{
    interpolate_snr_at_ser, run_calibrate, run_experiment, run_rre_trace, run_ser_sweep, run_step_count,
    CalibrateOutcome, RrePoint, RreTraceOutcome, SerPoint, StartPolicy, StepCountPoint, StepsToTarget, SweepOutcome,
    TRACE_STEPS,
};

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationModel, HarvestSource, ModelError};
use crate::channel::{ChannelError, ChannelKind, ScenarioConfig};
use crate::detectors::{default_tol_schedule, DetectorError, DetectorKind, EpConfig, TILTED_VARIANCE_FLOOR};
use crate::solvers::SolverError;
use parse::{parse_f64_list, parse_key_values, parse_list, parse_snr_grid, parse_switch, ParseError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{key}: {error}")]
    Parse { key: String, error: ParseError },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("calibration file: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    RreTrace,
    SerSweep,
    StepCount,
    Calibrate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RreTrace => "rre_trace",
            ExperimentKind::SerSweep => "ser_sweep",
            ExperimentKind::StepCount => "step_count",
            ExperimentKind::Calibrate => "calibrate",
        }
    }

    fn default_detectors(&self) -> &'static str {
        match self {
            ExperimentKind::RreTrace => "gs,cg,pcg,exact,epa",
            ExperimentKind::SerSweep => "lmmse,ep,epicg",
            ExperimentKind::StepCount => "epicg,epicg-sigma0",
            ExperimentKind::Calibrate => "epicg",
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub scenario: ScenarioConfig,
    pub detectors: Vec<String>,
    pub snr_grid: Vec<f64>,
    pub n_channels: usize,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub damping: f64,
    pub iterations: usize,
    /// pCG tolerances; each detector's default when `None`.
    pub tol_schedule: Option<Vec<f64>>,
    pub warm_start: bool,
    pub calibration: Option<Arc<CalibrationModel>>,
    /// Scenarios harvested by `calibrate`.
    pub calib_scenarios: usize,
    /// Floor on tilted variances in the EP site update.
    pub variance_floor: f64,
    /// Detector driving the calibration SNR search.
    pub calib_probe: HarvestSource,
    /// Detector whose trajectories are harvested for calibration.
    pub calib_source: HarvestSource,
}

impl ExperimentSpec {
    /// Defaults for `kind` on an `nt × nr` Rayleigh 16-QAM scenario.
    pub fn new(kind: ExperimentKind, nt: usize, nr: usize) -> Self {
        Self {
            kind,
            scenario: ScenarioConfig::rayleigh(nt, nr, 16, 0.0, 1),
            detectors: parse_list(kind.default_detectors()).expect("static list"),
            snr_grid: vec![0.0],
            n_channels: 5000,
            out: None,
            jobs: 0,
            damping: EpConfig::DEFAULT_DAMPING,
            iterations: EpConfig::DEFAULT_ITERATIONS,
            tol_schedule: None,
            warm_start: true,
            calibration: None,
            calib_scenarios: 100,
            variance_floor: TILTED_VARIANCE_FLOOR,
            calib_probe: HarvestSource::default(),
            calib_source: HarvestSource::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario.validate()?;
        if self.n_channels == 0 {
            return Err(HarnessError::Config("channels must be at least 1".into()));
        }
        if self.snr_grid.is_empty() || self.snr_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::Config(
                "SNR grid must be non-empty and strictly increasing".into(),
            ));
        }
        if self.detectors.is_empty() {
            return Err(HarnessError::Config("no detectors selected".into()));
        }
        Ok(())
    }

    /// Detector configured from this spec's EP settings. Names: `lmmse`,
    /// `ep`, `ep-cholesky`, `epicg`, `epicg-sigma0`, `ep-pcg`, `epa`.
    pub fn detector(&self, name: &str) -> Result<DetectorKind, HarnessError> {
        let tuned = |c: EpConfig| {
            let schedule = match (&self.tol_schedule, c.tol_schedule.len()) {
                (Some(s), _) => s.clone(),
                (None, 1) => c.tol_schedule.clone(),
                (None, _) => default_tol_schedule(self.iterations),
            };
            c.with_iterations(self.iterations)
                .with_damping(self.damping)
                .with_tol_schedule(schedule)
                .with_warm_start(self.warm_start)
                .with_calibration(self.calibration.clone())
                .with_variance_floor(self.variance_floor)
        };
        let config = match name {
            "lmmse" => return Ok(DetectorKind::Lmmse),
            "ep" => tuned(EpConfig::ep()),
            "ep-cholesky" => tuned(EpConfig::ep_cholesky()),
            "epicg" => tuned(EpConfig::epicg()),
            "epicg-sigma0" => tuned(EpConfig::epicg_sigma0()),
            "ep-pcg" => tuned(EpConfig::ep_pcg(1e-5)),
            "epa" => tuned(EpConfig::epa()),
            other => return Err(HarnessError::Config(format!("unknown detector {other:?}"))),
        };
        config.validate()?;
        Ok(DetectorKind::Ep(config))
    }
}

/// Unresolved settings; every field mirrors one flag / config key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub nt: Option<usize>,
    pub nr: Option<usize>,
    pub order: Option<usize>,
    pub channel: Option<String>,
    pub rho: Option<f64>,
    pub snr: Option<Vec<f64>>,
    pub detectors: Option<Vec<String>>,
    pub channels: Option<usize>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub iters: Option<usize>,
    pub tol_schedule: Option<Vec<f64>>,
    pub calib: Option<PathBuf>,
    pub warm_start: Option<bool>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub scenarios: Option<usize>,
    pub variance_floor: Option<f64>,
    pub calib_probe: Option<HarvestSource>,
    pub calib_source: Option<HarvestSource>,
}

/// Keys accepted in config files (same spelling as the long flags).
pub const SETTING_KEYS: &[&str] = &[
    "nt",
    "nr",
    "mod",
    "channel",
    "rho",
    "snr",
    "detectors",
    "channels",
    "seed",
    "beta",
    "iters",
    "tol-schedule",
    "calib",
    "warm-start",
    "out",
    "jobs",
    "scenarios",
    "variance-floor",
    "calib-probe",
    "calib-source",
];

fn parse_source(key: &str, value: &str) -> Result<HarvestSource, HarnessError> {
    match value.trim() {
        "epicg" => Ok(HarvestSource::Epicg),
        "ep" => Ok(HarvestSource::ExactEp),
        other => Err(HarnessError::Parse {
            key: key.into(),
            error: ParseError {
                message: format!("expected epicg or ep, found {other:?}"),
            },
        }),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| HarnessError::Parse {
        key: key.into(),
        error: ParseError {
            message: format!("{value:?}: {e}"),
        },
    })
}

impl Settings {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let wrap = |error: ParseError| HarnessError::Parse { key: key.into(), error };
        match key {
            "nt" => self.nt = Some(parse_value(key, value)?),
            "nr" => self.nr = Some(parse_value(key, value)?),
            "mod" => self.order = Some(parse_value(key, value)?),
            "channel" => self.channel = Some(value.trim().to_string()),
            "rho" => self.rho = Some(parse_value(key, value)?),
            "snr" => self.snr = Some(parse_snr_grid(value).map_err(wrap)?),
            "detectors" => self.detectors = Some(parse_list(value).map_err(wrap)?),
            "channels" => self.channels = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "beta" => self.beta = Some(parse_value(key, value)?),
            "iters" => self.iters = Some(parse_value(key, value)?),
            "tol-schedule" => self.tol_schedule = Some(parse_f64_list(value).map_err(wrap)?),
            "calib" => self.calib = Some(PathBuf::from(value.trim())),
            "warm-start" => self.warm_start = Some(parse_switch(value).map_err(wrap)?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "jobs" => self.jobs = Some(parse_value(key, value)?),
            "scenarios" => self.scenarios = Some(parse_value(key, value)?),
            "variance-floor" => self.variance_floor = Some(parse_value(key, value)?),
            "calib-probe" => self.calib_probe = Some(parse_source(key, value)?),
            "calib-source" => self.calib_source = Some(parse_source(key, value)?),
            other => return Err(HarnessError::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body.
    pub fn from_config_text(text: &str) -> Result<Self, HarnessError> {
        let pairs = parse_key_values(text).map_err(|error| HarnessError::Parse {
            key: "config".into(),
            error,
        })?;
        let mut s = Self::default();
        for (k, v) in pairs {
            s.set(&k, &v)?;
        }
        Ok(s)
    }

    /// Fields set in `overrides` replace those of `self`.
    pub fn merged(self, overrides: Settings) -> Settings {
        Settings {
            nt: overrides.nt.or(self.nt),
            nr: overrides.nr.or(self.nr),
            order: overrides.order.or(self.order),
            channel: overrides.channel.or(self.channel),
            rho: overrides.rho.or(self.rho),
            snr: overrides.snr.or(self.snr),
            detectors: overrides.detectors.or(self.detectors),
            channels: overrides.channels.or(self.channels),
            seed: overrides.seed.or(self.seed),
            beta: overrides.beta.or(self.beta),
            iters: overrides.iters.or(self.iters),
            tol_schedule: overrides.tol_schedule.or(self.tol_schedule),
            calib: overrides.calib.or(self.calib),
            warm_start: overrides.warm_start.or(self.warm_start),
            out: overrides.out.or(self.out),
            jobs: overrides.jobs.or(self.jobs),
            scenarios: overrides.scenarios.or(self.scenarios),
            variance_floor: overrides.variance_floor.or(self.variance_floor),
            calib_probe: overrides.calib_probe.or(self.calib_probe),
            calib_source: overrides.calib_source.or(self.calib_source),
        }
    }

    /// Resolves defaults, reads the calibration file and validates.
    pub fn into_spec(self, kind: ExperimentKind) -> Result<ExperimentSpec, HarnessError> {
        let nt = self.nt.unwrap_or(16);
        let mut spec = ExperimentSpec::new(kind, nt, self.nr.unwrap_or(nt));
        spec.scenario.order = self.order.unwrap_or(16);
        spec.scenario.seed = self.seed.unwrap_or(1);
        spec.scenario.channel = match self.channel.as_deref().unwrap_or("rayleigh") {
            "rayleigh" => {
                if self.rho.is_some() {
                    return Err(HarnessError::Config("rho only applies to the kronecker channel".into()));
                }
                ChannelKind::Rayleigh
            }
            "kronecker" => ChannelKind::Kronecker {
                rho: self.rho.unwrap_or(0.5),
            },
            other => return Err(HarnessError::Config(format!("unknown channel {other:?}"))),
        };
        if let Some(grid) = self.snr {
            spec.snr_grid = grid;
        }
        spec.scenario.snr_db = spec.snr_grid[0];
        if let Some(d) = self.detectors {
            spec.detectors = d;
        }
        spec.n_channels = self.channels.unwrap_or(spec.n_channels);
        spec.damping = self.beta.unwrap_or(spec.damping);
        spec.iterations = self.iters.unwrap_or(spec.iterations);
        spec.tol_schedule = self.tol_schedule;
        spec.warm_start = self.warm_start.unwrap_or(true);
        spec.out = self.out;
        spec.jobs = self.jobs.unwrap_or(0);
        spec.calib_scenarios = self.scenarios.unwrap_or(spec.calib_scenarios);
        spec.variance_floor = self.variance_floor.unwrap_or(spec.variance_floor);
        spec.calib_probe = self.calib_probe.unwrap_or(spec.calib_probe);
        spec.calib_source = self.calib_source.unwrap_or(spec.calib_source);
        if let Some(path) = self.calib {
            let text = std::fs::read_to_string(&path).map_err(|error| HarnessError::Io {
                path: path.display().to_string(),
                error,
            })?;
            spec.calibration = Some(Arc::new(CalibrationModel::parse(&text)?));
        }
        spec.validate()?;
        for name in &spec.detectors {
            experiments::check_detector_name(&spec, name)?;
        }
        Ok(spec)
    }
}
