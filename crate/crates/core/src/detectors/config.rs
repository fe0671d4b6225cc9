use std::sync::Arc;

use super::moments::TILTED_VARIANCE_FLOOR;
use super::DetectorError;
use crate::calibration::CalibrationModel;

/// How the marginal means of each EP iteration are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanBackend {
    /// `μ = Σ b` with `Σ` formed explicitly.
    ExactInverse,
    /// Direct Cholesky solve of `A μ = b`.
    Cholesky,
    /// Jacobi-preconditioned CG with the per-iteration tolerance schedule.
    Pcg,
    /// `μ⁽ℓ⁾ = μ_p⁽ℓ⁻¹⁾` (previous tilted means); exact solve at `ℓ = 0`.
    EpaFixedPoint,
}

/// How the marginal variances of each EP iteration are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceBackend {
    ExactDiag,
    CorrectedNeumann,
}

/// `(10⁻³, 10⁻⁴, 10⁻⁵, 10⁻⁵, …)` with `len` entries.
pub fn default_tol_schedule(len: usize) -> Vec<f64> {
    (0..len)
        .map(|ell| match ell {
            0 => 1e-3,
            1 => 1e-4,
            _ => 1e-5,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EpConfig {
    /// Number of EP iterations `L`.
    pub iterations: usize,
    /// Damping `β ∈ [0, 1]`.
    pub damping: f64,
    pub mean_backend: MeanBackend,
    pub variance_backend: VarianceBackend,
    /// Use the exact inverse for both moments at `ℓ = 0`.
    pub sigma0_init: bool,
    /// pCG tolerance per iteration; the last entry is reused beyond its end.
    pub tol_schedule: Vec<f64>,
    /// Start pCG at the previous marginal mean for `ℓ ≥ 1`.
    pub warm_start: bool,
    /// Correction coefficients; identity when absent.
    pub calibration: Option<Arc<CalibrationModel>>,
    /// Lower bound on tilted variances before they enter the site update.
    pub variance_floor: f64,
}

impl EpConfig {
    pub const DEFAULT_ITERATIONS: usize = 10;
    pub const DEFAULT_DAMPING: f64 = 0.1;

    fn base(mean_backend: MeanBackend, variance_backend: VarianceBackend) -> Self {
        Self {
            iterations: Self::DEFAULT_ITERATIONS,
            damping: Self::DEFAULT_DAMPING,
            mean_backend,
            variance_backend,
            sigma0_init: false,
            tol_schedule: default_tol_schedule(Self::DEFAULT_ITERATIONS),
            warm_start: true,
            calibration: None,
            variance_floor: TILTED_VARIANCE_FLOOR,
        }
    }

    /// Exact EP: explicit inverse for mean and variance.
    pub fn ep() -> Self {
        Self::base(MeanBackend::ExactInverse, VarianceBackend::ExactDiag)
    }

    /// Exact EP with the mean obtained by a Cholesky solve.
    pub fn ep_cholesky() -> Self {
        Self::base(MeanBackend::Cholesky, VarianceBackend::ExactDiag)
    }

    /// pCG means with the corrected variance approximation.
    pub fn epicg() -> Self {
        Self::base(MeanBackend::Pcg, VarianceBackend::CorrectedNeumann)
    }

    /// EPiCG with exact moments at `ℓ = 0`.
    pub fn epicg_sigma0() -> Self {
        Self {
            sigma0_init: true,
            ..Self::epicg()
        }
    }

    /// pCG means with exact variances and a fixed tolerance.
    pub fn ep_pcg(tol: f64) -> Self {
        Self {
            tol_schedule: vec![tol],
            ..Self::base(MeanBackend::Pcg, VarianceBackend::ExactDiag)
        }
    }

    /// Fixed-point mean approximation with the corrected variance.
    pub fn epa() -> Self {
        Self::base(MeanBackend::EpaFixedPoint, VarianceBackend::CorrectedNeumann)
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_tol_schedule(mut self, schedule: Vec<f64>) -> Self {
        self.tol_schedule = schedule;
        self
    }

    pub fn with_warm_start(mut self, warm_start: bool) -> Self {
        self.warm_start = warm_start;
        self
    }

    pub fn with_variance_floor(mut self, floor: f64) -> Self {
        self.variance_floor = floor;
        self
    }

    pub fn with_calibration(mut self, model: Option<Arc<CalibrationModel>>) -> Self {
        self.calibration = model;
        self
    }

    /// Tolerance of iteration `ell`, repeating the last entry.
    pub fn tol_at(&self, ell: usize) -> f64 {
        self.tol_schedule
            .get(ell)
            .or(self.tol_schedule.last())
            .copied()
            .unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.iterations == 0 {
            return Err(DetectorError::Config("at least one EP iteration is required".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(DetectorError::Config(format!(
                "damping {} outside [0, 1]",
                self.damping
            )));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(DetectorError::Config(format!(
                "variance floor {} must be positive",
                self.variance_floor
            )));
        }
        if self.mean_backend == MeanBackend::Pcg {
            if self.tol_schedule.is_empty() {
                return Err(DetectorError::Config("pCG backend needs a tolerance schedule".into()));
            }
            // A single entry is a constant tolerance; otherwise one per iteration.
            if self.tol_schedule.len() > 1 && self.tol_schedule.len() < self.iterations {
                return Err(DetectorError::Config(format!(
                    "tolerance schedule has {} entries for {} iterations",
                    self.tol_schedule.len(),
                    self.iterations
                )));
            }
            if let Some(t) = self.tol_schedule.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
                return Err(DetectorError::Config(format!("invalid pCG tolerance {t}")));
            }
        }
        if let Some(model) = &self.calibration {
            if self.variance_backend == VarianceBackend::CorrectedNeumann && model.iterations() < self.iterations {
                return Err(DetectorError::Config(format!(
                    "calibration covers {} iterations, detector runs {}",
                    model.iterations(),
                    self.iterations
                )));
            }
        }
        Ok(())
    }
}

/// Named detector, as selected on the command line.
#[derive(Debug, Clone)]
pub enum DetectorKind {
    Lmmse,
    Ep(EpConfig),
}
