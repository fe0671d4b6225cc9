//! Per-site EP moment matching: cavity, tilted moments and damped updates.

use crate::modem::Constellation;

/// Floor applied to tilted variances before they are inverted.
pub const TILTED_VARIANCE_FLOOR: f64 = 1e-4;

/// Site parameters and marginal moments of one EP iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    /// Site natural means `γₙ`.
    pub gamma: Vec<f64>,
    /// Site precisions `Λₙ > 0`.
    pub lambda: Vec<f64>,
    /// Marginal means `μₙ`.
    pub mu: Vec<f64>,
    /// Marginal variances `σₙ²`.
    pub sigma2: Vec<f64>,
    pub iteration: usize,
}

impl EpState {
    /// `γ = 0` and `Λ = 1/v`, where `v` is the per-dimension prior variance.
    pub fn initial(dim: usize, prior_variance: f64) -> Self {
        Self {
            gamma: vec![0.0; dim],
            lambda: vec![1.0 / prior_variance; dim],
            mu: vec![0.0; dim],
            sigma2: vec![prior_variance; dim],
            iteration: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Cavity moments of one site, or `None` when `1 − σₙ²Λₙ ≤ 0`.
pub fn cavity_moments(mu: f64, sigma2: f64, gamma: f64, lambda: f64) -> Option<(f64, f64)> {
    let denom = 1.0 - sigma2 * lambda;
    if !(denom > 0.0) {
        return None;
    }
    let sigma2_cav = sigma2 / denom;
    if !(sigma2_cav > 0.0 && sigma2_cav.is_finite()) {
        return None;
    }
    let mu_cav = sigma2_cav * (mu / sigma2 - gamma);
    Some((mu_cav, sigma2_cav))
}

/// Mean and variance of the cavity Gaussian restricted to the PAM alphabet.
pub fn tilted_moments(mu_cav: f64, sigma2_cav: f64, constellation: &Constellation) -> (f64, f64) {
    let levels = constellation.levels();
    let mut log_w = [0.0f64; 64];
    let log_w = &mut log_w[..levels.len()];
    let mut max = f64::NEG_INFINITY;
    for (lw, &s) in log_w.iter_mut().zip(levels) {
        let d = s - mu_cav;
        *lw = -d * d / (2.0 * sigma2_cav);
        max = max.max(*lw);
    }
    let mut total = 0.0;
    let mut first = 0.0;
    for (lw, &s) in log_w.iter_mut().zip(levels) {
        *lw = (*lw - max).exp();
        total += *lw;
        first += *lw * s;
    }
    let mean = first / total;
    let var = log_w
        .iter()
        .zip(levels)
        .map(|(w, s)| w * (s - mean) * (s - mean))
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Outcome counters of one site-update sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub invalid_cavities: usize,
    pub rejected_precisions: usize,
}

/// Damped site update for every site. A site keeps its previous `(γ, Λ)`
/// when its cavity is invalid or the new site precision is not positive.
///
/// `tilted` holds `(μ_p, σ_p²)` per site (`None` for invalid cavities).
pub fn ep_update_sites(state: &mut EpState, tilted: &[Option<(f64, f64)>], damping: f64) -> UpdateStats {
    ep_update_sites_with_floor(state, tilted, damping, TILTED_VARIANCE_FLOOR)
}

/// [`ep_update_sites`] with an explicit floor on the tilted variances.
pub fn ep_update_sites_with_floor(
    state: &mut EpState,
    tilted: &[Option<(f64, f64)>],
    damping: f64,
    variance_floor: f64,
) -> UpdateStats {
    let mut stats = UpdateStats::default();
    for n in 0..state.dim() {
        let Some((mu_p, sigma2_p)) = tilted[n] else {
            stats.invalid_cavities += 1;
            continue;
        };
        let sigma2_p = sigma2_p.max(variance_floor);
        let (mu, s2) = (state.mu[n], state.sigma2[n]);
        let (gamma, lambda) = (state.gamma[n], state.lambda[n]);
        let lambda_site = 1.0 / sigma2_p - (1.0 - s2 * lambda) / s2;
        let gamma_site = mu_p / sigma2_p - mu / s2 + gamma;
        if !(lambda_site > 0.0 && lambda_site.is_finite() && gamma_site.is_finite()) {
            stats.rejected_precisions += 1;
            continue;
        }
        state.lambda[n] = damping * lambda_site + (1.0 - damping) * lambda;
        state.gamma[n] = damping * gamma_site + (1.0 - damping) * gamma;
    }
    stats
}

/// Cavity plus tilted moments for every site.
pub fn tilted_for_state(state: &EpState, constellation: &Constellation) -> Vec<Option<(f64, f64)>> {
    (0..state.dim())
        .map(|n| {
            cavity_moments(state.mu[n], state.sigma2[n], state.gamma[n], state.lambda[n])
                .map(|(m, v)| tilted_moments(m, v, constellation))
        })
        .collect()
}
