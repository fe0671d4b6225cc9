//! Preconditioned conjugate gradient.
//!
//! With `g = A x − b` the recursion reads
//!
//! ```text
//! g⁽⁰⁾ = A x⁽⁰⁾ − b,  d⁽⁰⁾ = B g⁽⁰⁾,  ρ⁽⁰⁾ = ⟨B g⁽⁰⁾, g⁽⁰⁾⟩
//! α⁽ᵏ⁾   = ρ⁽ᵏ⁾ / ⟨A d⁽ᵏ⁾, d⁽ᵏ⁾⟩
//! x⁽ᵏ⁺¹⁾ = x⁽ᵏ⁾ − α⁽ᵏ⁾ d⁽ᵏ⁾
//! g⁽ᵏ⁺¹⁾ = g⁽ᵏ⁾ − α⁽ᵏ⁾ A d⁽ᵏ⁾
//! ρ⁽ᵏ⁺¹⁾ = ⟨B g⁽ᵏ⁺¹⁾, g⁽ᵏ⁺¹⁾⟩
//! d⁽ᵏ⁺¹⁾ = B g⁽ᵏ⁺¹⁾ + (ρ⁽ᵏ⁺¹⁾/ρ⁽ᵏ⁾) d⁽ᵏ⁾
//! ```
//!
//! and stops once `√ρ⁽ᵏ⁾ ≤ tol · ‖b‖₂`. `B = I` gives plain CG.

use super::{check_x0, SolveReport, SolverError, SpdSystem, Termination, TraceMode};
use crate::linalg::{axpy, dot, norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    Identity,
    Jacobi,
}

/// Diagonal preconditioner `B`.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    Identity,
    /// `B = diag(1/A₁₁, …, 1/A_NN)`.
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    pub fn kind(&self) -> PreconditionerKind {
        match self {
            Preconditioner::Identity => PreconditionerKind::Identity,
            Preconditioner::Jacobi(_) => PreconditionerKind::Jacobi,
        }
    }

    fn apply(&self, g: &[f64], out: &mut [f64]) {
        match self {
            Preconditioner::Identity => out.copy_from_slice(g),
            Preconditioner::Jacobi(diag) => {
                for ((o, gi), di) in out.iter_mut().zip(g).zip(diag) {
                    *o = gi * di;
                }
            }
        }
    }
}

/// Jacobi preconditioner from the diagonal of `a`.
pub fn jacobi_preconditioner(a: &Matrix) -> Result<Preconditioner, SolverError> {
    let diag = a.diagonal();
    let mut inv = Vec::with_capacity(diag.len());
    for (index, value) in diag.into_iter().enumerate() {
        let r = 1.0 / value;
        if !(value > 0.0 && r.is_finite()) {
            return Err(SolverError::NonPositiveDiagonal { index, value });
        }
        inv.push(r);
    }
    Ok(Preconditioner::Jacobi(inv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOptions {
    pub max_steps: usize,
    pub tol: f64,
    pub trace: TraceMode,
}

impl PcgOptions {
    /// Trace-mode options: every trace entry is a recomputed residual.
    pub fn traced(max_steps: usize, tol: f64) -> Self {
        Self {
            max_steps,
            tol,
            trace: TraceMode::Recomputed,
        }
    }

    /// Production options: only the `√ρ` criterion is evaluated.
    pub fn production(max_steps: usize, tol: f64) -> Self {
        Self {
            max_steps,
            tol,
            trace: TraceMode::Recursive,
        }
    }
}

pub fn pcg(
    system: &SpdSystem,
    preconditioner: &Preconditioner,
    x0: Option<&[f64]>,
    options: &PcgOptions,
) -> Result<SolveReport, SolverError> {
    let a = system.a();
    let b = system.b();
    let n = system.dim();
    if let Preconditioner::Jacobi(d) = preconditioner {
        if d.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: d.len(),
            });
        }
    }
    let mut x = check_x0(n, x0)?;
    let b_norm = norm2(b);
    let scale = if b_norm > 0.0 { 1.0 / b_norm } else { 1.0 };
    let threshold = options.tol * b_norm;

    let mut g = a.matvec(&x);
    for (gi, bi) in g.iter_mut().zip(b) {
        *gi -= bi;
    }
    let mut h = vec![0.0; n];
    preconditioner.apply(&g, &mut h);
    let mut d = h.clone();
    let mut rho = dot(&h, &g);
    let mut ad = vec![0.0; n];

    let record = |x: &[f64], g: &[f64]| match options.trace {
        TraceMode::Recomputed => system.relative_residual(x),
        TraceMode::Recursive => norm2(g) * scale,
    };

    let mut trace = Vec::with_capacity(options.max_steps.min(4 * n) + 1);
    trace.push(record(&x, &g));
    let mut steps = 0;
    let termination = loop {
        if rho.sqrt() <= threshold {
            break Termination::ToleranceMet;
        }
        if steps == options.max_steps {
            break Termination::MaxSteps;
        }
        a.matvec_into(&d, &mut ad);
        let curvature = dot(&ad, &d);
        if !(curvature > 0.0 && curvature.is_finite()) {
            break Termination::Breakdown;
        }
        let alpha = rho / curvature;
        axpy(-alpha, &d, &mut x);
        axpy(-alpha, &ad, &mut g);
        preconditioner.apply(&g, &mut h);
        let rho_next = dot(&h, &g);
        let beta = rho_next / rho;
        for (di, hi) in d.iter_mut().zip(&h) {
            *di = hi + beta * *di;
        }
        rho = rho_next;
        steps += 1;
        trace.push(record(&x, &g));
    };

    Ok(SolveReport {
        x,
        steps,
        rre_trace: trace,
        trace_mode: options.trace,
        termination,
    })
}
