//! Dense symmetric-positive-definite kernels.
//!
//! [`cholesky`] provides the exact factorization path (solve, inverse and
//! inverse diagonal). [`gauss_seidel`] and [`pcg`] are the iterative solvers;
//! both return a [`SolveReport`] with a per-step residual trace.

pub mod cholesky;
pub mod gauss_seidel;
pub mod pcg;

pub use cholesky::{cholesky_solve, inverse_diagonal, invert_spd, CholeskyFactor};
pub use gauss_seidel::gauss_seidel;
pub use pcg::{jacobi_preconditioner, pcg, PcgOptions, Preconditioner, PreconditionerKind};

use thiserror::Error;

use crate::linalg::Matrix;

/// Relative symmetry tolerance accepted by [`SpdSystem::new`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("matrix is not positive definite (pivot {pivot} is {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("diagonal entry {index} is {value}, expected a positive finite value")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("diagonal entry {index} is zero")]
    ZeroDiagonal { index: usize },
}

/// Linear system `A x = b` with `A` symmetric and a positive diagonal.
#[derive(Debug, Clone)]
pub struct SpdSystem {
    a: Matrix,
    b: Vec<f64>,
}

impl SpdSystem {
    /// Validates shape, symmetry (relative `1e-10`) and diagonal positivity.
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self, SolverError> {
        if !a.is_square() {
            return Err(SolverError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if b.len() != a.rows() {
            return Err(SolverError::DimensionMismatch {
                expected: a.rows(),
                found: b.len(),
            });
        }
        let asym = a.relative_asymmetry();
        if !(asym <= SYMMETRY_TOLERANCE) {
            return Err(SolverError::NotSymmetric(asym));
        }
        for (index, value) in a.diagonal().into_iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SolverError::NonPositiveDiagonal { index, value });
            }
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// True relative residual `‖A x − b‖₂ / ‖b‖₂`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        crate::linalg::relative_residual(&self.a, x, &self.b)
    }

    pub fn into_parts(self) -> (Matrix, Vec<f64>) {
        (self.a, self.b)
    }
}

/// Why an iterative solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ToleranceMet,
    MaxSteps,
    /// `⟨A d, d⟩ ≤ 0`; the report holds the last valid iterate.
    Breakdown,
}

/// What the residual trace of a [`SolveReport`] contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// `‖A x̂⁽ᵏ⁾ − b‖₂/‖b‖₂` recomputed from each iterate.
    Recomputed,
    /// The recursion's own residual `‖g⁽ᵏ⁾‖₂/‖b‖₂`; no extra products.
    Recursive,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub steps: usize,
    /// One entry per step, starting at `k = 0`; `len == steps + 1`.
    pub rre_trace: Vec<f64>,
    pub trace_mode: TraceMode,
    pub termination: Termination,
}

impl SolveReport {
    pub fn final_rre(&self) -> f64 {
        *self.rre_trace.last().expect("trace always holds k = 0")
    }
}

fn check_x0(n: usize, x0: Option<&[f64]>) -> Result<Vec<f64>, SolverError> {
    match x0 {
        Some(x) if x.len() != n => Err(SolverError::DimensionMismatch {
            expected: n,
            found: x.len(),
        }),
        Some(x) => Ok(x.to_vec()),
        None => Ok(vec![0.0; n]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_system_validation() {
        let ok = SpdSystem::new(Matrix::identity(2), vec![1.0, 2.0]);
        assert!(ok.is_ok());

        let nonsym = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]);
        assert!(matches!(
            SpdSystem::new(nonsym, vec![1.0, 1.0]),
            Err(SolverError::NotSymmetric(_))
        ));

        let bad_diag = Matrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            SpdSystem::new(bad_diag, vec![1.0, 1.0]),
            Err(SolverError::NonPositiveDiagonal { index: 1, .. })
        ));

        assert!(matches!(
            SpdSystem::new(Matrix::identity(2), vec![1.0]),
            Err(SolverError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SpdSystem::new(Matrix::zeros(2, 3), vec![1.0, 1.0]),
            Err(SolverError::NotSquare { .. })
        ));
    }
}
