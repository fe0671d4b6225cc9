//! The EP iteration loop shared by every EP-family detector.

use super::config::{EpConfig, MeanBackend, VarianceBackend};
use super::moments::{ep_update_sites_with_floor, tilted_for_state, EpState};
use super::variance::variance_corrected;
use super::{DetectionResult, DetectorError, EpDiagnostics, PreparedSystem};
use crate::calibration::CalibrationModel;
use crate::channel::RealLinearSystem;
use crate::modem::{hard_decision, Constellation};
use crate::solvers::{jacobi_preconditioner, pcg, CholeskyFactor, PcgOptions, SolveReport, SpdSystem, Termination};

/// Snapshot handed to observers once the moments of iteration `ell` are known
/// and before the sites are updated.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub ell: usize,
    /// `A⁽ℓ⁾, b⁽ℓ⁾` built from the current sites.
    pub system: &'a SpdSystem,
    /// Sites of this iteration with `mu`/`sigma2` holding its marginals.
    /// On the final pass only `mu` is refreshed.
    pub state: &'a EpState,
    /// Tilted means of the previous iteration (`None` at `ℓ = 0`).
    pub previous_tilted_mean: Option<&'a [f64]>,
    /// Marginal means of the previous iteration (`None` at `ℓ = 0`).
    pub previous_mu: Option<&'a [f64]>,
    /// The inference pass after the last site update.
    pub is_final: bool,
}

/// Runs EP with the given configuration.
pub fn ep_detect(
    system: &RealLinearSystem,
    constellation: &Constellation,
    config: &EpConfig,
) -> Result<DetectionResult, DetectorError> {
    ep_detect_observed(system, constellation, config, |_| {})
}

/// [`ep_detect`] with a callback invoked once per iteration, including the
/// final inference pass.
pub fn ep_detect_observed<F>(
    system: &RealLinearSystem,
    constellation: &Constellation,
    config: &EpConfig,
    observer: F,
) -> Result<DetectionResult, DetectorError>
where
    F: FnMut(&IterationView<'_>),
{
    ep_detect_prepared(&PreparedSystem::new(system), constellation, config, observer)
}

/// EP on a prepared system, with an observer as in [`ep_detect_observed`].
pub fn ep_detect_prepared<F>(
    prepared: &PreparedSystem,
    constellation: &Constellation,
    config: &EpConfig,
    observer: F,
) -> Result<DetectionResult, DetectorError>
where
    F: FnMut(&IterationView<'_>),
{
    config.validate()?;
    run(prepared, constellation, config, observer)
}

struct Moments {
    mu: Vec<f64>,
    sigma2: Option<Vec<f64>>,
}

fn run<F>(
    prepared: &PreparedSystem,
    constellation: &Constellation,
    config: &EpConfig,
    mut observer: F,
) -> Result<DetectionResult, DetectorError>
where
    F: FnMut(&IterationView<'_>),
{
    let n = prepared.dim();
    let identity = CalibrationModel::identity(config.iterations);
    let model = config.calibration.as_deref().unwrap_or(&identity);

    let mut state = EpState::initial(n, constellation.per_dim_variance());
    let mut previous_tilted: Option<Vec<f64>> = None;
    let mut previous_mu: Option<Vec<f64>> = None;
    let mut reports: Vec<SolveReport> = Vec::new();
    let mut diagnostics = EpDiagnostics::default();

    for ell in 0..=config.iterations {
        let is_final = ell == config.iterations;
        state.iteration = ell;
        let min_lambda = state.lambda.iter().copied().fold(f64::INFINITY, f64::min);
        diagnostics.min_lambda = diagnostics.min_lambda.min(min_lambda);
        let sys = super::build_a_b(prepared, &state)?;
        diagnostics.max_asymmetry = diagnostics.max_asymmetry.max(sys.a().relative_asymmetry());

        let exact_here = config.sigma0_init && ell == 0;
        let (mean_backend, variance_backend) = if exact_here {
            (MeanBackend::ExactInverse, VarianceBackend::ExactDiag)
        } else {
            (config.mean_backend, config.variance_backend)
        };

        let warm = if config.warm_start && ell > 0 {
            Some(state.mu.as_slice())
        } else {
            None
        };
        let moments = compute_moments(
            &sys,
            ell,
            mean_backend,
            (!is_final).then_some(variance_backend),
            model,
            config.tol_at(ell),
            warm,
            previous_tilted.as_deref(),
            &mut reports,
            &mut diagnostics,
        );
        let Some(moments) = moments else {
            // Factorization failed: keep the previous moments and sites.
            diagnostics.factorization_failures += 1;
            if is_final {
                break;
            }
            continue;
        };

        let mut mu = moments.mu;
        if mu.iter().any(|v| !v.is_finite()) {
            diagnostics.breakdowns += 1;
            for (m, old) in mu.iter_mut().zip(&state.mu) {
                if !m.is_finite() {
                    *m = *old;
                }
            }
        }
        state.mu = mu;
        if let Some(s2) = moments.sigma2 {
            state.sigma2 = s2;
        }
        observer(&IterationView {
            ell,
            system: &sys,
            state: &state,
            previous_tilted_mean: previous_tilted.as_deref(),
            previous_mu: previous_mu.as_deref(),
            is_final,
        });
        if is_final {
            break;
        }
        previous_mu = Some(state.mu.clone());

        let tilted = tilted_for_state(&state, constellation);
        previous_tilted = Some(
            tilted
                .iter()
                .zip(&state.mu)
                .map(|(t, m)| t.map_or(*m, |(mp, _)| mp))
                .collect(),
        );
        let stats = ep_update_sites_with_floor(&mut state, &tilted, config.damping, config.variance_floor);
        diagnostics.invalid_cavities += stats.invalid_cavities;
        diagnostics.rejected_updates += stats.rejected_precisions;
    }

    let decided = hard_decision(&state.mu, constellation)?;
    let total_pcg_steps = reports.iter().map(|r| r.steps).sum();
    Ok(DetectionResult {
        decided,
        mu_final: state.mu,
        total_pcg_steps,
        per_iter_reports: reports,
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn compute_moments(
    sys: &SpdSystem,
    ell: usize,
    mean_backend: MeanBackend,
    variance_backend: Option<VarianceBackend>,
    model: &CalibrationModel,
    tol: f64,
    warm_start: Option<&[f64]>,
    previous_tilted: Option<&[f64]>,
    reports: &mut Vec<SolveReport>,
    diagnostics: &mut EpDiagnostics,
) -> Option<Moments> {
    let a = sys.a();
    let mut factor: Option<CholeskyFactor> = None;
    let mut inverse = None;

    let mu = match (mean_backend, previous_tilted) {
        (MeanBackend::ExactInverse, _) => {
            let f = CholeskyFactor::new(a).ok()?;
            let sigma = f.inverse();
            let mu = sigma.matvec(sys.b());
            inverse = Some(sigma);
            factor = Some(f);
            mu
        }
        (MeanBackend::Cholesky, _) | (MeanBackend::EpaFixedPoint, None) => {
            let f = CholeskyFactor::new(a).ok()?;
            let mu = f.solve(sys.b()).ok()?;
            factor = Some(f);
            mu
        }
        (MeanBackend::EpaFixedPoint, Some(tilted)) => tilted.to_vec(),
        (MeanBackend::Pcg, _) => {
            let pre = jacobi_preconditioner(a).ok()?;
            let options = PcgOptions::production(2 * sys.dim(), tol);
            let report = pcg(sys, &pre, warm_start, &options).ok()?;
            if report.termination == Termination::Breakdown {
                diagnostics.breakdowns += 1;
            }
            let mu = report.x.clone();
            reports.push(report);
            mu
        }
    };

    let sigma2 = match variance_backend {
        None => None,
        Some(VarianceBackend::CorrectedNeumann) => Some(variance_corrected(a, ell, model)),
        Some(VarianceBackend::ExactDiag) => Some(match (inverse, factor) {
            (Some(inv), _) => inv.diagonal(),
            (None, Some(f)) => f.inverse_diagonal(),
            (None, None) => CholeskyFactor::new(a).ok()?.inverse_diagonal(),
        }),
    };
    Some(Moments { mu, sigma2 })
}
