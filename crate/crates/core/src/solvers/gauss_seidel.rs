//! Forward Gauss-Seidel sweeps.

use super::{check_x0, SolveReport, SolverError, SpdSystem, Termination, TraceMode};
use crate::linalg::dot;

/// Runs forward sweeps (ascending index order) until the relative residual
/// drops to `tol` or `max_sweeps` sweeps have been made. Each sweep is one
/// entry of the trace.
pub fn gauss_seidel(
    system: &SpdSystem,
    x0: Option<&[f64]>,
    max_sweeps: usize,
    tol: f64,
) -> Result<SolveReport, SolverError> {
    let a = system.a();
    let b = system.b();
    let n = system.dim();
    if let Some(index) = a.diagonal().iter().position(|&d| d == 0.0) {
        return Err(SolverError::ZeroDiagonal { index });
    }
    let mut x = check_x0(n, x0)?;
    let mut trace = vec![system.relative_residual(&x)];
    let mut steps = 0;
    let termination = loop {
        if trace[steps] <= tol {
            break Termination::ToleranceMet;
        }
        if steps == max_sweeps {
            break Termination::MaxSteps;
        }
        for i in 0..n {
            let row = a.row(i);
            // Off-diagonal sum uses updated entries before i and old ones after.
            let off = dot(&row[..i], &x[..i]) + dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (b[i] - off) / row[i];
        }
        steps += 1;
        trace.push(system.relative_residual(&x));
    };
    Ok(SolveReport {
        x,
        steps,
        rre_trace: trace,
        trace_mode: TraceMode::Recomputed,
        termination,
    })
}
