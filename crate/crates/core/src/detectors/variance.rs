//! Marginal variances: exact inverse diagonal and the corrected first-term
//! Neumann approximation.

use crate::calibration::CalibrationModel;
use crate::linalg::Matrix;
use crate::solvers::{inverse_diagonal, SolverError};

/// Diagonal of `A⁻¹`.
pub fn variance_exact(a: &Matrix) -> Result<Vec<f64>, SolverError> {
    inverse_diagonal(a)
}

/// `σ̃ₙ² = max{α₁/Aₙₙ + α₂, 1/Aₙₙ}` with the coefficients of iteration `ell`.
pub fn variance_corrected(a: &Matrix, ell: usize, model: &CalibrationModel) -> Vec<f64> {
    let (alpha1, alpha2) = model.coefficients(ell);
    a.diagonal()
        .into_iter()
        .map(|d| {
            let base = 1.0 / d;
            (alpha1 * base + alpha2).max(base)
        })
        .collect()
}
