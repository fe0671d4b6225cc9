//! Symbol detectors.
//!
//! Every EP-family detector runs through [`ep_detect`]; the variants differ
//! only in how the marginal means and variances of each iteration are
//! obtained ([`MeanBackend`], [`VarianceBackend`]) and in whether iteration 0
//! falls back to the exact inverse (`sigma0_init`).

mod config;
mod ep;
pub mod moments;
pub mod variance;

pub use config::{default_tol_schedule, DetectorKind, EpConfig, MeanBackend, VarianceBackend};
pub use ep::{ep_detect, ep_detect_observed, ep_detect_prepared, IterationView};
pub use moments::{
    cavity_moments, ep_update_sites, ep_update_sites_with_floor, tilted_for_state, tilted_moments, EpState,
    TILTED_VARIANCE_FLOOR,
};
pub use variance::{variance_corrected, variance_exact};

use thiserror::Error;

use crate::channel::RealLinearSystem;
use crate::linalg::Matrix;
use crate::modem::{hard_decision, Constellation, ModemError, SymbolVector};
use crate::solvers::{CholeskyFactor, SolveReport, SolverError, SpdSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Modem(#[from] ModemError),
}

/// Health counters of one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpDiagnostics {
    /// Smallest site precision that entered any system matrix.
    pub min_lambda: f64,
    /// Largest relative asymmetry of any system matrix.
    pub max_asymmetry: f64,
    pub breakdowns: usize,
    pub factorization_failures: usize,
    pub invalid_cavities: usize,
    pub rejected_updates: usize,
}

impl Default for EpDiagnostics {
    fn default() -> Self {
        Self {
            min_lambda: f64::INFINITY,
            max_asymmetry: 0.0,
            breakdowns: 0,
            factorization_failures: 0,
            invalid_cavities: 0,
            rejected_updates: 0,
        }
    }
}

impl EpDiagnostics {
    pub fn merge(&mut self, other: &EpDiagnostics) {
        self.min_lambda = self.min_lambda.min(other.min_lambda);
        self.max_asymmetry = self.max_asymmetry.max(other.max_asymmetry);
        self.breakdowns += other.breakdowns;
        self.factorization_failures += other.factorization_failures;
        self.invalid_cavities += other.invalid_cavities;
        self.rejected_updates += other.rejected_updates;
    }
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub decided: SymbolVector,
    pub mu_final: Vec<f64>,
    /// Sum of `steps` over `per_iter_reports`.
    pub total_pcg_steps: usize,
    /// One report per pCG solve, in iteration order; empty for other backends.
    pub per_iter_reports: Vec<SolveReport>,
    pub diagnostics: EpDiagnostics,
}

/// SNR-scaled Gram matrix `σ⁻²HᵀH` and matched filter `σ⁻²Hᵀy`, computed
/// once per detection and shared by every iteration.
#[derive(Debug, Clone)]
pub struct PreparedSystem {
    gram: Matrix,
    matched: Vec<f64>,
}

impl PreparedSystem {
    pub fn new(system: &RealLinearSystem) -> Self {
        let inv = 1.0 / system.sigma2;
        let mut gram = system.h.gram();
        gram.scale(inv);
        let mut matched = system.h.matvec_transposed(&system.y);
        matched.iter_mut().for_each(|v| *v *= inv);
        Self { gram, matched }
    }

    /// From an already scaled Gram matrix and matched filter.
    pub fn from_parts(scaled_gram: Matrix, matched_filter: Vec<f64>) -> Result<Self, SolverError> {
        if !scaled_gram.is_square() {
            return Err(SolverError::NotSquare {
                rows: scaled_gram.rows(),
                cols: scaled_gram.cols(),
            });
        }
        if scaled_gram.rows() != matched_filter.len() {
            return Err(SolverError::DimensionMismatch {
                expected: scaled_gram.rows(),
                found: matched_filter.len(),
            });
        }
        Ok(Self {
            gram: scaled_gram,
            matched: matched_filter,
        })
    }

    pub fn dim(&self) -> usize {
        self.matched.len()
    }

    pub fn scaled_gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn matched_filter(&self) -> &[f64] {
        &self.matched
    }

    /// `A = σ⁻²HᵀH + diag(Λ)` and `b = σ⁻²Hᵀy + γ`.
    pub fn build_a_b(&self, lambda: &[f64], gamma: &[f64]) -> Result<SpdSystem, SolverError> {
        let mut a = self.gram.clone();
        a.add_diagonal(lambda);
        let b = self.matched.iter().zip(gamma).map(|(m, g)| m + g).collect();
        SpdSystem::new(a, b)
    }
}

/// Builds the per-iteration system for `state` (see [`PreparedSystem::build_a_b`]).
pub fn build_a_b(prepared: &PreparedSystem, state: &EpState) -> Result<SpdSystem, SolverError> {
    prepared.build_a_b(&state.lambda, &state.gamma)
}

/// Linear MMSE: `μ = (σ⁻²HᵀH + I/v)⁻¹ σ⁻²Hᵀy` followed by hard decisions.
pub fn lmmse_detect(
    system: &RealLinearSystem,
    constellation: &Constellation,
) -> Result<DetectionResult, DetectorError> {
    let prepared = PreparedSystem::new(system);
    lmmse_prepared(&prepared, constellation)
}

pub fn lmmse_prepared(
    prepared: &PreparedSystem,
    constellation: &Constellation,
) -> Result<DetectionResult, DetectorError> {
    let n = prepared.dim();
    let prior_precision = vec![1.0 / constellation.per_dim_variance(); n];
    let sys = prepared.build_a_b(&prior_precision, &vec![0.0; n])?;
    let mu = CholeskyFactor::new(sys.a())?.solve(sys.b())?;
    let decided = hard_decision(&mu, constellation)?;
    Ok(DetectionResult {
        decided,
        mu_final: mu,
        total_pcg_steps: 0,
        per_iter_reports: Vec::new(),
        diagnostics: EpDiagnostics::default(),
    })
}

/// Runs the detector named by `kind`.
pub fn detect(
    kind: &DetectorKind,
    system: &RealLinearSystem,
    constellation: &Constellation,
) -> Result<DetectionResult, DetectorError> {
    detect_prepared(kind, &PreparedSystem::new(system), constellation)
}

/// [`detect`] on a system whose Gram matrix is already formed.
pub fn detect_prepared(
    kind: &DetectorKind,
    prepared: &PreparedSystem,
    constellation: &Constellation,
) -> Result<DetectionResult, DetectorError> {
    match kind {
        DetectorKind::Lmmse => lmmse_prepared(prepared, constellation),
        DetectorKind::Ep(config) => ep_detect_prepared(prepared, constellation, config, |_| {}),
    }
}
