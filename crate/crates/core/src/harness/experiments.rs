use std::fs::File;
use std::io::{BufWriter, Write};

use super::csv::{write_csv, CsvRow};
use super::trial::{par_map, Trial};
use super::{ExperimentKind, ExperimentSpec, HarnessError};
use crate::calibration::{
    find_snr_bounds, fit_least_squares, harvest_dataset, model_residuals, CalibrationModel, CalibrationOptions,
    FitReport, SnrBounds,
};
use crate::channel::snr_to_sigma2;
use crate::detectors::{detect_prepared, ep_detect_prepared, DetectorKind, EpConfig, EpDiagnostics};
use crate::modem::{count_symbol_errors, Constellation};
use crate::rng::derive_seed;
use crate::solvers::{cholesky_solve, gauss_seidel, jacobi_preconditioner, pcg, PcgOptions, Preconditioner, SpdSystem};

/// Solver steps recorded per trace (`k = 0..=TRACE_STEPS`).
pub const TRACE_STEPS: usize = 64;
/// RRE level used for the steps-to-target summary of a trace.
pub const TRACE_TARGET: f64 = 1e-4;
/// EP iterations whose systems are traced.
const TRACE_ITERATIONS: usize = 4;

const TRACE_SOLVERS: &[&str] = &["gs", "cg", "pcg", "exact", "epa"];
const STEP_COUNT_DETECTORS: &[&str] = &["epicg", "epicg-sigma0"];

pub(super) fn check_detector_name(spec: &ExperimentSpec, name: &str) -> Result<(), HarnessError> {
    let allowed = match spec.kind {
        ExperimentKind::RreTrace => TRACE_SOLVERS,
        ExperimentKind::StepCount => STEP_COUNT_DETECTORS,
        _ => return spec.detector(name).map(|_| ()),
    };
    if !allowed.contains(&name) {
        return Err(HarnessError::Config(format!(
            "{} accepts {}, not {name:?}",
            spec.kind.name(),
            allowed.join(", ")
        )));
    }
    if spec.kind == ExperimentKind::StepCount {
        spec.detector(name)?;
    }
    Ok(())
}

fn trial_seed(spec: &ExperimentSpec) -> u64 {
    derive_seed(spec.scenario.seed, "trials")
}

/// SER of one detector at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SerPoint {
    pub snr_db: f64,
    pub detector: String,
    pub errors: usize,
    /// Complex symbols decided, `n_channels · Nt`.
    pub total: usize,
    pub ser: f64,
    /// Binomial standard error `√(p(1−p)/total)`.
    pub stderr: f64,
    pub mean_pcg_steps: f64,
    /// Standard error of `mean_pcg_steps`.
    pub steps_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Ordered by SNR, then by detector in spec order.
    pub points: Vec<SerPoint>,
    pub diagnostics: EpDiagnostics,
    /// Draw checksum of every trial, in trial order.
    pub checksums: Vec<u64>,
}

impl SweepOutcome {
    pub fn point(&self, detector: &str, snr_db: f64) -> Option<&SerPoint> {
        self.points
            .iter()
            .find(|p| p.detector == detector && p.snr_db == snr_db)
    }

    /// `(snr_db, ser)` pairs of one detector.
    pub fn curve(&self, detector: &str) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.detector == detector)
            .map(|p| (p.snr_db, p.ser))
            .collect()
    }

    pub fn to_rows(&self, spec: &ExperimentSpec) -> Vec<CsvRow> {
        self.points
            .iter()
            .map(|p| CsvRow {
                experiment: ExperimentKind::SerSweep.name(),
                detector: p.detector.clone(),
                nt: spec.scenario.nt,
                nr: spec.scenario.nr,
                channel: spec.scenario.channel.name(),
                snr_db: Some(p.snr_db),
                ell: None,
                k: None,
                value: p.ser,
                stderr: Some(p.stderr),
                seed: spec.scenario.seed,
            })
            .collect()
    }
}

struct TrialCells {
    checksum: u64,
    /// `(symbol errors, pCG steps)` per (SNR, detector).
    cells: Vec<(usize, usize)>,
    diagnostics: EpDiagnostics,
}

/// Every detector sees the same trial draws at every SNR.
fn sweep(spec: &ExperimentSpec, detectors: &[(String, DetectorKind)]) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let constellation = Constellation::new(spec.scenario.order).map_err(crate::detectors::DetectorError::from)?;
    let seed = trial_seed(spec);
    let sigma2: Vec<f64> = spec
        .snr_grid
        .iter()
        .map(|&snr| snr_to_sigma2(snr, spec.scenario.nt, constellation.es()))
        .collect();

    let trials = par_map(spec.n_channels, spec.jobs, |i| -> Result<TrialCells, HarnessError> {
        let trial = Trial::generate(&spec.scenario, &constellation, seed, i as u64)?;
        let gram = trial.precompute();
        let mut cells = Vec::with_capacity(sigma2.len() * detectors.len());
        let mut diagnostics = EpDiagnostics::default();
        for &s2 in &sigma2 {
            let prepared = gram.prepared(s2);
            for (_, kind) in detectors {
                let result = detect_prepared(kind, &prepared, &constellation)?;
                let (errors, _) = count_symbol_errors(&result.decided, &trial.symbols)
                    .map_err(crate::detectors::DetectorError::from)?;
                cells.push((errors, result.total_pcg_steps));
                diagnostics.merge(&result.diagnostics);
            }
        }
        Ok(TrialCells {
            checksum: trial.checksum(),
            cells,
            diagnostics,
        })
    });

    let width = sigma2.len() * detectors.len();
    let mut errors = vec![0usize; width];
    let mut steps = vec![0f64; width];
    let mut steps_sq = vec![0f64; width];
    let mut checksums = Vec::with_capacity(spec.n_channels);
    let mut diagnostics = EpDiagnostics::default();
    for t in trials {
        let t = t?;
        for (j, (e, s)) in t.cells.into_iter().enumerate() {
            errors[j] += e;
            steps[j] += s as f64;
            steps_sq[j] += (s * s) as f64;
        }
        checksums.push(t.checksum);
        diagnostics.merge(&t.diagnostics);
    }

    let n = spec.n_channels as f64;
    let total = spec.n_channels * spec.scenario.nt;
    let mut points = Vec::with_capacity(width);
    for (si, &snr_db) in spec.snr_grid.iter().enumerate() {
        for (di, (name, _)) in detectors.iter().enumerate() {
            let j = si * detectors.len() + di;
            let ser = errors[j] as f64 / total as f64;
            let mean = steps[j] / n;
            let var = if spec.n_channels > 1 {
                ((steps_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            points.push(SerPoint {
                snr_db,
                detector: name.clone(),
                errors: errors[j],
                total,
                ser,
                stderr: (ser * (1.0 - ser) / total as f64).sqrt(),
                mean_pcg_steps: mean,
                steps_stderr: (var / n).sqrt(),
            });
        }
    }
    Ok(SweepOutcome {
        points,
        diagnostics,
        checksums,
    })
}

/// One SER point per (SNR, detector) over common random numbers.
pub fn run_ser_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome, HarnessError> {
    let detectors = spec
        .detectors
        .iter()
        .map(|name| Ok((name.clone(), spec.detector(name)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    sweep(spec, &detectors)
}

/// SNR at which a SER curve crosses `target`, interpolating linearly in
/// `log10(SER)` between the first pair of adjacent grid points that bracket
/// it.
pub fn interpolate_snr_at_ser(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((s0, p0), (s1, p1)) = (w[0], w[1]);
        if !(p0 >= target && p1 <= target) || p0 == p1 {
            return None;
        }
        if p1 > 0.0 {
            let (l0, l1, lt) = (p0.log10(), p1.log10(), target.log10());
            Some(s0 + (s1 - s0) * (l0 - lt) / (l0 - l1))
        } else {
            Some(s0 + (s1 - s0) * (p0 - target) / (p0 - p1))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    Warm,
    Cold,
}

impl StartPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StartPolicy::Warm => "warm",
            StartPolicy::Cold => "cold",
        }
    }
}

/// Mean total pCG steps of one detector and start policy at its operating
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCountPoint {
    pub detector: String,
    pub policy: StartPolicy,
    /// Grid SNR whose SER is closest to 10⁻² (in log scale).
    pub snr_db: f64,
    pub ser: f64,
    pub mean_steps: f64,
    pub steps_stderr: f64,
}

impl StepCountPoint {
    pub fn label(&self) -> String {
        format!("{}@{}", self.detector, self.policy.name())
    }

    pub fn rounded_steps(&self) -> u64 {
        self.mean_steps.round() as u64
    }
}

fn nearest_to_operating_point<'a>(points: &[&'a SerPoint]) -> &'a SerPoint {
    let distance = |p: &SerPoint| {
        if p.ser > 0.0 {
            (p.ser.log10() + 2.0).abs()
        } else {
            f64::INFINITY
        }
    };
    // Ties keep the lower SNR.
    points
        .iter()
        .copied()
        .reduce(|best, p| if distance(p) < distance(best) { p } else { best })
        .expect("non-empty grid")
}

/// Total pCG steps under both warm and cold starts.
pub fn run_step_count(spec: &ExperimentSpec) -> Result<Vec<StepCountPoint>, HarnessError> {
    let mut detectors = Vec::new();
    let mut keys = Vec::new();
    for name in &spec.detectors {
        check_detector_name(
            &ExperimentSpec {
                kind: ExperimentKind::StepCount,
                ..spec.clone()
            },
            name,
        )?;
        for policy in [StartPolicy::Warm, StartPolicy::Cold] {
            let variant = ExperimentSpec {
                warm_start: policy == StartPolicy::Warm,
                ..spec.clone()
            };
            let label = format!("{name}@{}", policy.name());
            detectors.push((label.clone(), variant.detector(name)?));
            keys.push((name.clone(), policy, label));
        }
    }
    let outcome = sweep(spec, &detectors)?;
    // One operating point for every row: the grid SNR where the first
    // detector under warm start is nearest SER 10⁻².
    let reference: Vec<&SerPoint> = outcome.points.iter().filter(|p| p.detector == keys[0].2).collect();
    let snr_db = nearest_to_operating_point(&reference).snr_db;
    Ok(keys
        .into_iter()
        .map(|(name, policy, label)| {
            let p = outcome
                .point(&label, snr_db)
                .expect("every detector runs at every grid point");
            StepCountPoint {
                detector: name,
                policy,
                snr_db,
                ser: p.ser,
                mean_steps: p.mean_pcg_steps,
                steps_stderr: p.steps_stderr,
            }
        })
        .collect())
}

/// Median RRE of one solver after `k` steps on the systems of iteration `ell`.
#[derive(Debug, Clone, PartialEq)]
pub struct RrePoint {
    pub ell: usize,
    pub solver: String,
    pub k: usize,
    pub median: f64,
}

/// Median over channels of the first `k` with RRE ≤ `target`; channels that
/// never reach it count as `TRACE_STEPS + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepsToTarget {
    pub ell: usize,
    pub solver: String,
    pub target: f64,
    pub median_steps: f64,
}

#[derive(Debug, Clone)]
pub struct RreTraceOutcome {
    pub points: Vec<RrePoint>,
    pub steps_to: Vec<StepsToTarget>,
    pub diagnostics: EpDiagnostics,
}

impl RreTraceOutcome {
    pub fn median(&self, ell: usize, solver: &str, k: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.ell == ell && p.solver == solver && p.k == k)
            .map(|p| p.median)
    }

    pub fn steps_to_target(&self, ell: usize, solver: &str) -> Option<f64> {
        self.steps_to
            .iter()
            .find(|p| p.ell == ell && p.solver == solver)
            .map(|p| p.median_steps)
    }

    pub fn to_rows(&self, spec: &ExperimentSpec) -> Vec<CsvRow> {
        self.points
            .iter()
            .map(|p| CsvRow {
                experiment: ExperimentKind::RreTrace.name(),
                detector: p.solver.clone(),
                nt: spec.scenario.nt,
                nr: spec.scenario.nr,
                channel: spec.scenario.channel.name(),
                snr_db: Some(spec.snr_grid[0]),
                ell: Some(p.ell),
                k: Some(p.k),
                value: p.median,
                stderr: None,
                seed: spec.scenario.seed,
            })
            .collect()
    }
}

struct Frozen {
    system: SpdSystem,
    previous_tilted: Option<Vec<f64>>,
    previous_mu: Option<Vec<f64>>,
}

fn padded(mut trace: Vec<f64>) -> Vec<f64> {
    let last = *trace.last().expect("trace starts with k = 0");
    trace.resize(TRACE_STEPS + 1, last);
    trace.truncate(TRACE_STEPS + 1);
    trace
}

fn solver_trace(solver: &str, frozen: &Frozen, warm_start: bool) -> Result<Vec<f64>, HarnessError> {
    let sys = &frozen.system;
    let x0 = if warm_start {
        frozen.previous_mu.as_deref()
    } else {
        None
    };
    let trace = match solver {
        "gs" => gauss_seidel(sys, x0, TRACE_STEPS, 0.0)?.rre_trace,
        "cg" => {
            pcg(
                sys,
                &Preconditioner::Identity,
                x0,
                &PcgOptions::traced(TRACE_STEPS, 0.0),
            )?
            .rre_trace
        }
        "pcg" => {
            let pre = jacobi_preconditioner(sys.a())?;
            pcg(sys, &pre, x0, &PcgOptions::traced(TRACE_STEPS, 0.0))?.rre_trace
        }
        "exact" => vec![sys.relative_residual(&cholesky_solve(sys)?)],
        "epa" => {
            let mean = frozen.previous_tilted.clone().unwrap_or_else(|| vec![0.0; sys.dim()]);
            vec![sys.relative_residual(&mean)]
        }
        other => return Err(HarnessError::Config(format!("unknown solver {other:?}"))),
    };
    Ok(padded(trace))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Solver convergence on the systems of an exact-EP trajectory at the first
/// grid SNR.
pub fn run_rre_trace(spec: &ExperimentSpec) -> Result<RreTraceOutcome, HarnessError> {
    spec.validate()?;
    for name in &spec.detectors {
        check_detector_name(
            &ExperimentSpec {
                kind: ExperimentKind::RreTrace,
                ..spec.clone()
            },
            name,
        )?;
    }
    let constellation = Constellation::new(spec.scenario.order).map_err(crate::detectors::DetectorError::from)?;
    let sigma2 = snr_to_sigma2(spec.snr_grid[0], spec.scenario.nt, constellation.es());
    let ep = EpConfig::ep()
        .with_iterations(spec.iterations)
        .with_damping(spec.damping)
        .with_variance_floor(spec.variance_floor);
    let ells = TRACE_ITERATIONS.min(spec.iterations);
    let seed = trial_seed(spec);
    let solvers = &spec.detectors;

    // traces[channel][ell][solver] = RRE for k = 0..=TRACE_STEPS
    type ChannelTraces = (Vec<Vec<Vec<f64>>>, EpDiagnostics);
    let per_channel = par_map(spec.n_channels, spec.jobs, |i| -> Result<ChannelTraces, HarnessError> {
        let trial = Trial::generate(&spec.scenario, &constellation, seed, i as u64)?;
        let prepared = trial.precompute().prepared(sigma2);
        let mut frozen: Vec<Frozen> = Vec::with_capacity(ells);
        let result = ep_detect_prepared(&prepared, &constellation, &ep, |view| {
            if view.ell < ells && !view.is_final {
                frozen.push(Frozen {
                    system: view.system.clone(),
                    previous_tilted: view.previous_tilted_mean.map(<[f64]>::to_vec),
                    previous_mu: view.previous_mu.map(<[f64]>::to_vec),
                });
            }
        })?;
        let traces = frozen
            .iter()
            .map(|f| {
                solvers
                    .iter()
                    .map(|s| solver_trace(s, f, spec.warm_start))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((traces, result.diagnostics))
    });
    let mut channels = Vec::with_capacity(spec.n_channels);
    let mut diagnostics = EpDiagnostics::default();
    for c in per_channel {
        let (traces, d) = c?;
        diagnostics.merge(&d);
        channels.push(traces);
    }
    let available = channels.iter().map(Vec::len).min().unwrap_or(0);

    let mut points = Vec::new();
    let mut steps_to = Vec::new();
    let mut column = vec![0.0; channels.len()];
    for ell in 0..available {
        for (si, solver) in solvers.iter().enumerate() {
            for k in 0..=TRACE_STEPS {
                for (c, traces) in column.iter_mut().zip(&channels) {
                    *c = traces[ell][si][k];
                }
                points.push(RrePoint {
                    ell,
                    solver: solver.clone(),
                    k,
                    median: median(&mut column),
                });
            }
            if solver == "exact" || solver == "epa" {
                continue;
            }
            for (c, traces) in column.iter_mut().zip(&channels) {
                let t = &traces[ell][si];
                *c = t.iter().position(|r| *r <= TRACE_TARGET).unwrap_or(TRACE_STEPS + 1) as f64;
            }
            steps_to.push(StepsToTarget {
                ell,
                solver: solver.clone(),
                target: TRACE_TARGET,
                median_steps: median(&mut column),
            });
        }
    }
    Ok(RreTraceOutcome {
        points,
        steps_to,
        diagnostics,
    })
}

#[derive(Debug, Clone)]
pub struct CalibrateOutcome {
    pub bounds: SnrBounds,
    pub fit: FitReport,
    /// Residual of the identity model on the same dataset.
    pub identity_residuals: Vec<f64>,
    pub dropped: usize,
}

/// SNR bounds, harvest and fit in one go.
pub fn run_calibrate(spec: &ExperimentSpec) -> Result<CalibrateOutcome, HarnessError> {
    spec.validate()?;
    let constellation = Constellation::new(spec.scenario.order).map_err(crate::detectors::DetectorError::from)?;
    let options = CalibrationOptions {
        damping: spec.damping,
        tol_schedule: spec.tol_schedule.clone(),
        warm_start: spec.warm_start,
        jobs: spec.jobs,
        variance_floor: spec.variance_floor,
        probe: spec.calib_probe,
        source: spec.calib_source,
        ..CalibrationOptions::default()
    };
    let bounds = find_snr_bounds(&spec.scenario, &constellation, (1e-2, 1e-1), &options)?;
    let dataset = harvest_dataset(
        &spec.scenario,
        &constellation,
        bounds,
        spec.calib_scenarios,
        spec.iterations,
        &options,
    )?;
    let fit = fit_least_squares(&dataset)?;
    let identity_residuals = model_residuals(&dataset, &CalibrationModel::identity(spec.iterations));
    Ok(CalibrateOutcome {
        bounds,
        fit,
        identity_residuals,
        dropped: dataset.dropped(),
    })
}

fn output(spec: &ExperimentSpec) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match &spec.out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|error| {
            HarnessError::Io {
                path: path.display().to_string(),
                error,
            }
        })?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn io_error(spec: &ExperimentSpec, error: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: spec.out.as_ref().map_or("<stdout>".into(), |p| p.display().to_string()),
        error,
    }
}

/// Runs `spec` and writes its CSV (or calibration file) to `spec.out`, or
/// stdout when unset.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    let rows = match spec.kind {
        ExperimentKind::SerSweep => run_ser_sweep(spec)?.to_rows(spec),
        ExperimentKind::RreTrace => run_rre_trace(spec)?.to_rows(spec),
        ExperimentKind::StepCount => run_step_count(spec)?
            .iter()
            .map(|p| CsvRow {
                experiment: ExperimentKind::StepCount.name(),
                detector: p.label(),
                nt: spec.scenario.nt,
                nr: spec.scenario.nr,
                channel: spec.scenario.channel.name(),
                snr_db: Some(p.snr_db),
                ell: None,
                k: None,
                value: p.rounded_steps() as f64,
                stderr: Some(p.steps_stderr),
                seed: spec.scenario.seed,
            })
            .collect(),
        ExperimentKind::Calibrate => {
            let outcome = run_calibrate(spec)?;
            let text = format!(
                "# snr bounds {} {} dB, {} scenarios, {} dropped\n{}",
                super::parse::format_g9(outcome.bounds.lo_db),
                super::parse::format_g9(outcome.bounds.hi_db),
                spec.calib_scenarios,
                outcome.dropped,
                outcome.fit.model.to_text()
            );
            let mut out = output(spec)?;
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| io_error(spec, e))?;
            return Ok(());
        }
    };
    write_csv(&rows, output(spec)?).map_err(|e| io_error(spec, e))
}
