//! Training data for the corrected variance estimate and its least-squares
//! fit.
//!
//! The pipeline is [`find_snr_bounds`] → [`harvest_dataset`] →
//! [`fit_least_squares`]. Each stage is deterministic given the scenario seed.

pub mod model;

pub use model::{CalibrationModel, ModelError};

use rand::Rng;
use thiserror::Error;

use crate::channel::{snr_to_sigma2, ChannelError, ChannelKind, ScenarioConfig};
use crate::detectors::{
    default_tol_schedule, detect_prepared, ep_detect_prepared, DetectorError, DetectorKind, EpConfig,
    TILTED_VARIANCE_FLOOR,
};
use crate::harness::trial::{par_map, Trial};
use crate::linalg::Matrix;
use crate::modem::{count_symbol_errors, Constellation};
use crate::rng::{derive_seed, stream_rng};
use crate::solvers::{inverse_diagonal, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("invalid target SER interval: {0}")]
    InvalidTarget(String),
    #[error("SNR search failed: {0}")]
    Bisection(String),
    #[error("need at least 2 samples per iteration, iteration {iteration} has {found}")]
    InsufficientSamples { iteration: usize, found: usize },
    #[error("iteration {iteration}, sample {sample}: {message}")]
    InvalidSample {
        iteration: usize,
        sample: usize,
        message: String,
    },
    #[error("invalid SNR bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// SNR interval (dB) from which harvesting draws uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrBounds {
    pub lo_db: f64,
    pub hi_db: f64,
}

impl SnrBounds {
    pub fn new(lo_db: f64, hi_db: f64) -> Result<Self, CalibrationError> {
        if !(lo_db.is_finite() && hi_db.is_finite() && lo_db < hi_db) {
            return Err(CalibrationError::InvalidBounds(lo_db, hi_db));
        }
        Ok(Self { lo_db, hi_db })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo_db + self.hi_db)
    }
}

/// Regressor `(1/Aₙₙ)ₙ` and target `((A⁻¹)ₙₙ)ₙ` of one system matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub regressor: Vec<f64>,
    pub target: Vec<f64>,
}

impl SamplePair {
    pub fn from_matrix(a: &Matrix) -> Result<Self, SolverError> {
        let target = inverse_diagonal(a)?;
        let regressor = a.diagonal().into_iter().map(f64::recip).collect();
        Ok(Self { regressor, target })
    }
}

/// Which detector produces the harvested trajectories or probes the SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HarvestSource {
    /// EPiCG with identity calibration.
    Epicg,
    /// Exact EP. Identity EPiCG is overconfident when `Nt ≈ Nr`: its SER
    /// floors above the search targets and its site precisions run ahead of
    /// those a calibrated detector sees.
    #[default]
    ExactEp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub nt: usize,
    pub nr: usize,
    pub channel: ChannelKind,
    pub bounds: SnrBounds,
    pub seed: u64,
    pub source: HarvestSource,
}

/// Sample pairs grouped by EP iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    per_iteration: Vec<Vec<SamplePair>>,
    meta: Option<DatasetMeta>,
    dropped: usize,
}

impl CalibrationDataset {
    /// Validates that every bucket holds at least two pairs of positive,
    /// equal-length vectors.
    pub fn new(per_iteration: Vec<Vec<SamplePair>>) -> Result<Self, CalibrationError> {
        if per_iteration.is_empty() {
            return Err(CalibrationError::InsufficientSamples { iteration: 0, found: 0 });
        }
        for (ell, bucket) in per_iteration.iter().enumerate() {
            if bucket.len() < 2 {
                return Err(CalibrationError::InsufficientSamples {
                    iteration: ell,
                    found: bucket.len(),
                });
            }
            for (i, pair) in bucket.iter().enumerate() {
                let bad = |message: &str| CalibrationError::InvalidSample {
                    iteration: ell,
                    sample: i,
                    message: message.into(),
                };
                if pair.regressor.len() != pair.target.len() || pair.regressor.is_empty() {
                    return Err(bad("regressor and target lengths differ"));
                }
                let positive = |v: &f64| *v > 0.0 && v.is_finite();
                if !pair.regressor.iter().all(positive) || !pair.target.iter().all(positive) {
                    return Err(bad("entries must be positive and finite"));
                }
            }
        }
        Ok(Self {
            per_iteration,
            meta: None,
            dropped: 0,
        })
    }

    pub fn iterations(&self) -> usize {
        self.per_iteration.len()
    }

    pub fn samples(&self, ell: usize) -> &[SamplePair] {
        &self.per_iteration[ell]
    }

    pub fn meta(&self) -> Option<&DatasetMeta> {
        self.meta.as_ref()
    }

    /// Samples discarded during harvesting because a solve failed.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// Settings shared by the SNR search and harvesting.
#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub damping: f64,
    /// pCG tolerances; the standard schedule when `None`.
    pub tol_schedule: Option<Vec<f64>>,
    pub warm_start: bool,
    /// Detector whose trajectories are harvested.
    pub source: HarvestSource,
    /// Detector whose pilot SER drives the SNR search.
    pub probe: HarvestSource,
    /// Channels per SNR probe.
    pub pilot_channels: usize,
    /// Search range of the bisection, dB.
    pub search_db: (f64, f64),
    /// Bisection stops once the bracket is this narrow, dB.
    pub resolution_db: f64,
    pub jobs: usize,
    pub variance_floor: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            damping: EpConfig::DEFAULT_DAMPING,
            tol_schedule: None,
            warm_start: true,
            source: HarvestSource::default(),
            probe: HarvestSource::default(),
            pilot_channels: 200,
            search_db: (-10.0, 50.0),
            resolution_db: 0.25,
            jobs: 0,
            variance_floor: TILTED_VARIANCE_FLOOR,
        }
    }
}

impl CalibrationOptions {
    /// Identity-calibrated detector used for probing and harvesting.
    fn detector(&self, iterations: usize, source: HarvestSource) -> EpConfig {
        let base = match source {
            HarvestSource::Epicg => EpConfig::epicg(),
            HarvestSource::ExactEp => EpConfig::ep(),
        };
        base.with_iterations(iterations)
            .with_damping(self.damping)
            .with_tol_schedule(
                self.tol_schedule
                    .clone()
                    .unwrap_or_else(|| default_tol_schedule(iterations)),
            )
            .with_warm_start(self.warm_start)
            .with_variance_floor(self.variance_floor)
    }
}

fn pilot_ser(
    scenario: &ScenarioConfig,
    constellation: &Constellation,
    detector: &DetectorKind,
    snr_db: f64,
    channels: usize,
    jobs: usize,
) -> Result<f64, CalibrationError> {
    let seed = derive_seed(scenario.seed, "snr-bounds");
    let sigma2 = snr_to_sigma2(snr_db, scenario.nt, constellation.es());
    let counts = par_map(channels, jobs, |i| -> Result<(usize, usize), CalibrationError> {
        let trial = Trial::generate(scenario, constellation, seed, i as u64)?;
        let prepared = trial.precompute().prepared(sigma2);
        let result = detect_prepared(detector, &prepared, constellation)?;
        Ok(count_symbol_errors(&result.decided, &trial.symbols).map_err(DetectorError::from)?)
    });
    let (mut errors, mut total) = (0usize, 0usize);
    for c in counts {
        let (e, t) = c?;
        errors += e;
        total += t;
    }
    Ok(errors as f64 / total as f64)
}

/// Bisects for the SNR where the pilot SER crosses `target`.
fn bisect(
    ser_at: &mut dyn FnMut(f64) -> Result<f64, CalibrationError>,
    target: f64,
    (mut lo, mut hi): (f64, f64),
    resolution: f64,
) -> Result<f64, CalibrationError> {
    let (ser_lo, ser_hi) = (ser_at(lo)?, ser_at(hi)?);
    if !(ser_lo > target && ser_hi <= target) {
        return Err(CalibrationError::Bisection(format!(
            "SER {ser_lo:.3e} at {lo} dB and {ser_hi:.3e} at {hi} dB do not bracket {target:.3e}"
        )));
    }
    let mut last_above = ser_lo;
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let ser = ser_at(mid)?;
        if ser > last_above {
            return Err(CalibrationError::Bisection(format!(
                "SER estimate increased with SNR near {mid} dB"
            )));
        }
        if ser > target {
            lo = mid;
            last_above = ser;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// SNR interval over which the identity-calibrated detector moves from
/// `target.1` down to `target.0` SER.
pub fn find_snr_bounds(
    scenario: &ScenarioConfig,
    constellation: &Constellation,
    target: (f64, f64),
    options: &CalibrationOptions,
) -> Result<SnrBounds, CalibrationError> {
    let (low_ser, high_ser) = target;
    if !(low_ser > 0.0 && high_ser < 0.5 && low_ser < high_ser) {
        return Err(CalibrationError::InvalidTarget(format!(
            "({low_ser}, {high_ser}) must satisfy 0 < lo < hi < 0.5"
        )));
    }
    // Bisection at a pilot batch of a few hundred channels cannot tell apart
    // targets closer than a factor of two.
    if high_ser / low_ser < 2.0 {
        return Err(CalibrationError::InvalidTarget(format!(
            "({low_ser}, {high_ser}) is narrower than a factor of 2"
        )));
    }
    scenario.validate()?;
    if options.pilot_channels == 0 {
        return Err(CalibrationError::InvalidTarget("pilot batch is empty".into()));
    }
    let detector = DetectorKind::Ep(options.detector(EpConfig::DEFAULT_ITERATIONS, options.probe));

    let attempt = |channels: usize| -> Result<SnrBounds, CalibrationError> {
        let mut ser_at = |snr: f64| pilot_ser(scenario, constellation, &detector, snr, channels, options.jobs);
        let lo = bisect(&mut ser_at, high_ser, options.search_db, options.resolution_db)?;
        let hi = bisect(&mut ser_at, low_ser, options.search_db, options.resolution_db)?;
        SnrBounds::new(lo, hi)
            .map_err(|_| CalibrationError::Bisection(format!("crossings out of order: {lo} dB, {hi} dB")))
    };
    match attempt(options.pilot_channels) {
        Err(CalibrationError::Bisection(_)) => attempt(2 * options.pilot_channels),
        other => other,
    }
}

/// Runs `d` identity-calibrated detections at SNRs drawn uniformly from
/// `bounds` and records one [`SamplePair`] per iteration `ℓ < l` of each.
pub fn harvest_dataset(
    scenario: &ScenarioConfig,
    constellation: &Constellation,
    bounds: SnrBounds,
    d: usize,
    l: usize,
    options: &CalibrationOptions,
) -> Result<CalibrationDataset, CalibrationError> {
    if d < 2 {
        return Err(CalibrationError::InsufficientSamples { iteration: 0, found: d });
    }
    SnrBounds::new(bounds.lo_db, bounds.hi_db)?;
    scenario.validate()?;
    let config = options.detector(l, options.source);
    config.validate()?;

    let trial_seed = derive_seed(scenario.seed, "harvest");
    let snr_seed = derive_seed(scenario.seed, "harvest-snr");
    let outcomes = par_map(d, options.jobs, |i| -> Option<Vec<SamplePair>> {
        let snr = stream_rng(snr_seed, i as u64).random_range(bounds.lo_db..bounds.hi_db);
        let sigma2 = snr_to_sigma2(snr, scenario.nt, constellation.es());
        let trial = Trial::generate(scenario, constellation, trial_seed, i as u64).ok()?;
        let prepared = trial.precompute().prepared(sigma2);
        let mut pairs = Vec::with_capacity(l);
        let mut failed = false;
        let result = ep_detect_prepared(&prepared, constellation, &config, |view| {
            if view.is_final || failed {
                return;
            }
            match SamplePair::from_matrix(view.system.a()) {
                Ok(p) if pairs.len() == view.ell => pairs.push(p),
                _ => failed = true,
            }
        });
        (result.is_ok() && !failed && pairs.len() == l).then_some(pairs)
    });

    let mut per_iteration: Vec<Vec<SamplePair>> = vec![Vec::with_capacity(d); l];
    let mut dropped = 0;
    for outcome in outcomes {
        match outcome {
            Some(pairs) => {
                for (bucket, pair) in per_iteration.iter_mut().zip(pairs) {
                    bucket.push(pair);
                }
            }
            None => dropped += 1,
        }
    }
    let mut dataset = CalibrationDataset::new(per_iteration)?;
    dataset.dropped = dropped;
    dataset.meta = Some(DatasetMeta {
        nt: scenario.nt,
        nr: scenario.nr,
        channel: scenario.channel,
        bounds,
        seed: scenario.seed,
        source: options.source,
    });
    Ok(dataset)
}

/// Fitted model with per-iteration residual sums and degeneracy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: CalibrationModel,
    pub residuals: Vec<f64>,
    /// Iterations whose regressor had zero variance.
    pub degenerate: Vec<bool>,
}

/// `Σ (α₁·xₙ + α₂ − tₙ)²` over every pair of iteration `ell`.
pub fn residual(dataset: &CalibrationDataset, ell: usize, alpha1: f64, alpha2: f64) -> f64 {
    dataset.per_iteration[ell]
        .iter()
        .flat_map(|p| p.regressor.iter().zip(&p.target))
        .map(|(x, t)| {
            let e = alpha1 * x + alpha2 - t;
            e * e
        })
        .sum()
}

/// Residual of `model` at every iteration of `dataset`.
pub fn model_residuals(dataset: &CalibrationDataset, model: &CalibrationModel) -> Vec<f64> {
    (0..dataset.iterations())
        .map(|ell| {
            let (a1, a2) = model.coefficients(ell);
            residual(dataset, ell, a1, a2)
        })
        .collect()
}

/// Closed-form two-parameter least squares per iteration.
pub fn fit_least_squares(dataset: &CalibrationDataset) -> Result<FitReport, CalibrationError> {
    let l = dataset.iterations();
    let mut alpha1 = Vec::with_capacity(l);
    let mut alpha2 = Vec::with_capacity(l);
    let mut degenerate = Vec::with_capacity(l);
    for bucket in &dataset.per_iteration {
        let points = || bucket.iter().flat_map(|p| p.regressor.iter().zip(&p.target));
        let count = points().count() as f64;
        let x_mean = points().map(|(x, _)| x).sum::<f64>() / count;
        let t_mean = points().map(|(_, t)| t).sum::<f64>() / count;
        // Centered sums keep the fit accurate when 1/Aₙₙ varies little.
        let (mut sxx, mut sxt) = (0.0, 0.0);
        for (x, t) in points() {
            let dx = x - x_mean;
            sxx += dx * dx;
            sxt += dx * (t - t_mean);
        }
        if sxx <= 1e-24 * count * x_mean * x_mean {
            alpha1.push(0.0);
            alpha2.push(t_mean);
            degenerate.push(true);
        } else {
            let a1 = sxt / sxx;
            alpha1.push(a1);
            alpha2.push(t_mean - a1 * x_mean);
            degenerate.push(false);
        }
    }
    let model = CalibrationModel::new(alpha1, alpha2)?;
    let residuals = model_residuals(dataset, &model);
    Ok(FitReport {
        model,
        residuals,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn planted(a1: f64, a2: f64, buckets: usize) -> CalibrationDataset {
        let mut rng = stream_rng(11, 0);
        let per_iteration = (0..buckets)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let regressor: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..2.0)).collect();
                        let target = regressor.iter().map(|x| a1 * x + a2).collect();
                        SamplePair { regressor, target }
                    })
                    .collect()
            })
            .collect();
        CalibrationDataset::new(per_iteration).unwrap()
    }

    #[test]
    fn exact_neumann_data_gives_identity() {
        let fit = fit_least_squares(&planted(1.0, 0.0, 2)).unwrap();
        for ell in 0..2 {
            let (a1, a2) = fit.model.coefficients(ell);
            assert_abs_diff_eq!(a1, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a2, 0.0, epsilon = 1e-12);
            assert!(fit.residuals[ell] < 1e-24);
            assert!(!fit.degenerate[ell]);
        }
    }

    #[test]
    fn planted_model_is_recovered() {
        let fit = fit_least_squares(&planted(3.0, 0.2, 4)).unwrap();
        for ell in 0..4 {
            let (a1, a2) = fit.model.coefficients(ell);
            assert_abs_diff_eq!(a1, 3.0, epsilon = 1e-10);
            assert_abs_diff_eq!(a2, 0.2, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_regressor_is_degenerate() {
        let pair = |t: f64| SamplePair {
            regressor: vec![0.5; 3],
            target: vec![t; 3],
        };
        let ds = CalibrationDataset::new(vec![vec![pair(1.0), pair(2.0)]]).unwrap();
        let fit = fit_least_squares(&ds).unwrap();
        assert_eq!(fit.model.coefficients(0), (0.0, 1.5));
        assert!(fit.degenerate[0]);
    }

    #[test]
    fn dataset_validation() {
        let good = SamplePair {
            regressor: vec![1.0],
            target: vec![1.0],
        };
        assert!(matches!(
            CalibrationDataset::new(vec![vec![good.clone()]]),
            Err(CalibrationError::InsufficientSamples { iteration: 0, found: 1 })
        ));
        let negative = SamplePair {
            regressor: vec![1.0],
            target: vec![-1.0],
        };
        assert!(CalibrationDataset::new(vec![vec![good.clone(), negative]]).is_err());
        let ragged = SamplePair {
            regressor: vec![1.0, 2.0],
            target: vec![1.0],
        };
        assert!(CalibrationDataset::new(vec![vec![good, ragged]]).is_err());
    }

    #[test]
    fn diagonal_matrix_regressor_matches_target() {
        let a = Matrix::from_diag(&[2.0, 5.0, 0.25, 7.5]);
        let p = SamplePair::from_matrix(&a).unwrap();
        for (x, t) in p.regressor.iter().zip(&p.target) {
            assert!((x - t).abs() <= 2.0 * f64::EPSILON * t);
        }
    }

    #[test]
    fn bounds_reject_degenerate_targets() {
        let s = ScenarioConfig::rayleigh(2, 2, 4, 0.0, 1);
        let c = Constellation::new(4).unwrap();
        let opts = CalibrationOptions::default();
        for target in [(0.3, 0.3001), (0.1, 0.01), (0.0, 0.1), (0.1, 0.6)] {
            assert!(matches!(
                find_snr_bounds(&s, &c, target, &opts),
                Err(CalibrationError::InvalidTarget(_))
            ));
        }
    }

    #[test]
    fn bisection_on_a_known_curve() {
        // SER falls by a decade every 10 dB from 0.5 at 0 dB.
        let mut curve = |snr: f64| Ok(0.5 * 10f64.powf(-snr / 10.0));
        let x = bisect(&mut curve, 0.05, (-10.0, 40.0), 0.01).unwrap();
        assert_abs_diff_eq!(x, 10.0, epsilon = 0.01);
        let mut rising = |snr: f64| Ok(if snr > 20.0 { 0.4 } else { 0.01 });
        assert!(bisect(&mut rising, 0.05, (-10.0, 40.0), 0.01).is_err());
    }

    #[test]
    fn harvest_shape_contract() {
        let s = ScenarioConfig::rayleigh(2, 2, 4, 0.0, 4);
        let c = Constellation::new(4).unwrap();
        let bounds = SnrBounds::new(5.0, 10.0).unwrap();
        let opts = CalibrationOptions {
            jobs: 1,
            ..Default::default()
        };
        let ds = harvest_dataset(&s, &c, bounds, 2, 1, &opts).unwrap();
        assert_eq!(ds.iterations(), 1);
        assert_eq!(ds.samples(0).len(), 2);
        for p in ds.samples(0) {
            assert_eq!(p.regressor.len(), 4);
            assert!(p.target.iter().all(|t| *t > 0.0));
        }
        assert_eq!(ds.dropped(), 0);
        assert!(matches!(
            harvest_dataset(&s, &c, bounds, 1, 1, &opts),
            Err(CalibrationError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn harvest_is_deterministic_across_thread_counts() {
        let s = ScenarioConfig::rayleigh(4, 4, 16, 0.0, 8);
        let c = Constellation::new(16).unwrap();
        let bounds = SnrBounds::new(8.0, 14.0).unwrap();
        let serial = CalibrationOptions {
            jobs: 1,
            ..Default::default()
        };
        let parallel = CalibrationOptions {
            jobs: 3,
            ..Default::default()
        };
        let a = fit_least_squares(&harvest_dataset(&s, &c, bounds, 6, 3, &serial).unwrap()).unwrap();
        let b = fit_least_squares(&harvest_dataset(&s, &c, bounds, 6, 3, &parallel).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
