//! Massive-MIMO symbol detection with expectation propagation (EP).
//!
//! The crate contains the exact EP detector together with its inversion-free
//! variants, where each EP iteration splits marginal inference into a
//! Jacobi-preconditioned conjugate-gradient solve for the means and a
//! calibrated diagonal approximation for the variances.
//!
//! Module overview:
//!
//! - [`channel`]: Rayleigh and Kronecker-correlated channels, SNR mapping and
//!   the complex to real decomposition.
//! - [`modem`]: square QAM constellations as real PAM alphabets, hard decisions
//!   and symbol-error counting.
//! - [`solvers`]: dense SPD kernels (Cholesky solve and inverse, Gauss-Seidel,
//!   CG and Jacobi-preconditioned CG with residual traces).
//! - [`detectors`]: LMMSE, EP, EPiCG, EPiCG-Σ⁽⁰⁾, EP-pCG and the EPA baseline.
//! - [`calibration`]: dataset harvesting and least-squares fitting of the
//!   variance correction coefficients.
//! - [`harness`]: Monte-Carlo experiment runners emitting CSV.

// `!(x > 0.0)` is deliberate: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod channel;
pub mod detectors;
pub mod harness;
pub mod linalg;
pub mod modem;
pub mod rng;
pub mod solvers;

pub use calibration::CalibrationModel;
pub use channel::{ChannelKind, ComplexChannel, RealLinearSystem};
pub use detectors::{DetectionResult, EpConfig, MeanBackend, VarianceBackend};
pub use linalg::Matrix;
pub use modem::{Constellation, SymbolVector};
pub use solvers::{Preconditioner, SolveReport, SpdSystem, Termination};
