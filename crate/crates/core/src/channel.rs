//! Channel generation, SNR mapping and the complex to real decomposition.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::solvers::CholeskyFactor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("correlation coefficient {0} outside [0, 1)")]
    InvalidCorrelation(f64),
    #[error("correlation matrix square root failed: {0}")]
    Factorization(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("antenna counts must be positive (nt={nt}, nr={nr})")]
    EmptyDimension { nt: usize, nr: usize },
    #[error("constellation order {0} is not a perfect square of an even power")]
    InvalidOrder(usize),
    #[error("noise variance must be positive and finite, got {0}")]
    InvalidNoiseVariance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    Rayleigh,
    /// Exponential correlation `ρ^{|i−j|}` at both ends, power-controlled.
    Kronecker {
        rho: f64,
    },
}

impl ChannelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Kronecker { .. } => "kronecker",
        }
    }
}

/// One transmission scenario: antenna counts, SNR, alphabet, channel model
/// and the reproducibility seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub nt: usize,
    pub nr: usize,
    pub snr_db: f64,
    /// QAM alphabet size `M`.
    pub order: usize,
    pub channel: ChannelKind,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn rayleigh(nt: usize, nr: usize, order: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            nt,
            nr,
            snr_db,
            order,
            channel: ChannelKind::Rayleigh,
            seed,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.nt == 0 || self.nr == 0 {
            return Err(ChannelError::EmptyDimension {
                nt: self.nt,
                nr: self.nr,
            });
        }
        if let ChannelKind::Kronecker { rho } = self.channel {
            if !(0.0..1.0).contains(&rho) {
                return Err(ChannelError::InvalidCorrelation(rho));
            }
        }
        if !self.snr_db.is_finite() {
            return Err(ChannelError::InvalidNoiseVariance(f64::NAN));
        }
        let m = self.order;
        if !(m >= 4 && m.is_power_of_two() && m.trailing_zeros().is_multiple_of(2)) {
            return Err(ChannelError::InvalidOrder(m));
        }
        Ok(())
    }
}

/// Complex channel matrix with `nr` rows and `nt` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexChannel {
    nt: usize,
    nr: usize,
    entries: Vec<Complex64>,
}

impl ComplexChannel {
    pub fn from_entries(nt: usize, nr: usize, entries: Vec<Complex64>) -> Result<Self, ChannelError> {
        if nt == 0 || nr == 0 {
            return Err(ChannelError::EmptyDimension { nt, nr });
        }
        if entries.len() != nt * nr {
            return Err(ChannelError::DimensionMismatch {
                expected: nt * nr,
                found: entries.len(),
            });
        }
        Ok(Self { nt, nr, entries })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.nt + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.nt);
        (0..self.nr)
            .map(|i| {
                self.entries[i * self.nt..(i + 1) * self.nt]
                    .iter()
                    .zip(x)
                    .map(|(h, v)| h * v)
                    .sum()
            })
            .collect()
    }

    /// `(1/Nr) Σᵢ |Hᵢⱼ|²` for every column `j`.
    pub fn column_powers(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nt];
        for row in self.entries.chunks_exact(self.nt) {
            for (pj, h) in p.iter_mut().zip(row) {
                *pj += h.norm_sqr();
            }
        }
        p.iter_mut().for_each(|v| *v /= self.nr as f64);
        p
    }

    /// Rescales each column to unit average power (perfect power control).
    pub fn normalize_columns(&mut self) {
        let scale: Vec<f64> = self
            .column_powers()
            .into_iter()
            .map(|p| if p > 0.0 { p.sqrt().recip() } else { 1.0 })
            .collect();
        for row in self.entries.chunks_exact_mut(self.nt) {
            for (h, s) in row.iter_mut().zip(&scale) {
                *h *= *s;
            }
        }
    }

    /// Real block matrix `[[Re, −Im], [Im, Re]]` of size `2Nr × 2Nt`.
    pub fn to_real_matrix(&self) -> Matrix {
        let (nt, nr) = (self.nt, self.nr);
        let mut m = Matrix::zeros(2 * nr, 2 * nt);
        for i in 0..nr {
            for j in 0..nt {
                let h = self.get(i, j);
                m[(i, j)] = h.re;
                m[(i, j + nt)] = -h.im;
                m[(i + nr, j)] = h.im;
                m[(i + nr, j + nt)] = h.re;
            }
        }
        m
    }

    /// Inverse of [`to_real_matrix`](Self::to_real_matrix), reading the left
    /// block column.
    pub fn from_real_matrix(m: &Matrix) -> Result<Self, ChannelError> {
        if !m.rows().is_multiple_of(2) || !m.cols().is_multiple_of(2) {
            return Err(ChannelError::DimensionMismatch {
                expected: 2 * (m.rows() / 2),
                found: m.rows(),
            });
        }
        let (nr, nt) = (m.rows() / 2, m.cols() / 2);
        let entries = (0..nr)
            .flat_map(|i| (0..nt).map(move |j| Complex64::new(m[(i, j)], m[(i + nr, j)])))
            .collect();
        Self::from_entries(nt, nr, entries)
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// I.i.d. `CN(0, 1)` entries.
pub fn sample_rayleigh<R: Rng + ?Sized>(nt: usize, nr: usize, rng: &mut R) -> Result<ComplexChannel, ChannelError> {
    if nt == 0 || nr == 0 {
        return Err(ChannelError::EmptyDimension { nt, nr });
    }
    let entries = (0..nt * nr).map(|_| complex_normal(rng)).collect();
    ComplexChannel::from_entries(nt, nr, entries)
}

/// Lower Cholesky factor of the exponential correlation matrix `ρ^{|i−j|}`.
fn correlation_sqrt(n: usize, rho: f64) -> Result<Matrix, ChannelError> {
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = rho.powi(i.abs_diff(j) as i32);
        }
    }
    CholeskyFactor::new(&r)
        .map(|f| f.factor().clone())
        .map_err(|e| ChannelError::Factorization(e.to_string()))
}

/// Kronecker-correlated channel `R_r^{1/2} G R_t^{1/2}` followed by column
/// power normalization. `G` is drawn exactly as in [`sample_rayleigh`].
pub fn sample_kronecker<R: Rng + ?Sized>(
    nt: usize,
    nr: usize,
    rho: f64,
    rng: &mut R,
) -> Result<ComplexChannel, ChannelError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(ChannelError::InvalidCorrelation(rho));
    }
    let g = sample_rayleigh(nt, nr, rng)?;
    let lr = correlation_sqrt(nr, rho)?;
    let lt = correlation_sqrt(nt, rho)?;

    // Left factor: T = L_r G.
    let mut t = vec![Complex64::new(0.0, 0.0); nt * nr];
    for i in 0..nr {
        for k in 0..=i {
            let l = lr[(i, k)];
            if l == 0.0 {
                continue;
            }
            for j in 0..nt {
                t[i * nt + j] += g.get(k, j) * l;
            }
        }
    }
    // Right factor: H = T L_tᵀ, so H_ij = Σ_k T_ik L_t[j][k].
    let mut h = vec![Complex64::new(0.0, 0.0); nt * nr];
    for i in 0..nr {
        for j in 0..nt {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..=j {
                acc += t[i * nt + k] * lt[(j, k)];
            }
            h[i * nt + j] = acc;
        }
    }
    let mut channel = ComplexChannel::from_entries(nt, nr, h)?;
    channel.normalize_columns();
    Ok(channel)
}

pub fn sample_channel<R: Rng + ?Sized>(
    kind: ChannelKind,
    nt: usize,
    nr: usize,
    rng: &mut R,
) -> Result<ComplexChannel, ChannelError> {
    match kind {
        ChannelKind::Rayleigh => sample_rayleigh(nt, nr, rng),
        ChannelKind::Kronecker { rho } => sample_kronecker(nt, nr, rho, rng),
    }
}

/// Per-real-dimension noise variance for a receive SNR in dB, assuming
/// unit-variance channel entries: `σ² = Nt·Es·10^{−snr/10} / 2`.
pub fn snr_to_sigma2(snr_db: f64, nt: usize, es: f64) -> f64 {
    nt as f64 * es * 10f64.powf(-snr_db / 10.0) / 2.0
}

/// Real-valued system `y = H x + n` with `n ~ N(0, σ² I)`.
#[derive(Debug, Clone)]
pub struct RealLinearSystem {
    pub h: Matrix,
    pub y: Vec<f64>,
    pub sigma2: f64,
    pub nt: usize,
    pub nr: usize,
}

impl RealLinearSystem {
    pub fn new(h: Matrix, y: Vec<f64>, sigma2: f64) -> Result<Self, ChannelError> {
        if !h.rows().is_multiple_of(2) || !h.cols().is_multiple_of(2) || h.rows() == 0 || h.cols() == 0 {
            return Err(ChannelError::EmptyDimension {
                nt: h.cols() / 2,
                nr: h.rows() / 2,
            });
        }
        if y.len() != h.rows() {
            return Err(ChannelError::DimensionMismatch {
                expected: h.rows(),
                found: y.len(),
            });
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ChannelError::InvalidNoiseVariance(sigma2));
        }
        let (nr, nt) = (h.rows() / 2, h.cols() / 2);
        Ok(Self { h, y, sigma2, nt, nr })
    }

    pub fn dim(&self) -> usize {
        2 * self.nt
    }
}

/// Real decomposition of `(H, y, σ²)`.
pub fn to_real_system(
    channel: &ComplexChannel,
    y: &[Complex64],
    sigma2: f64,
) -> Result<RealLinearSystem, ChannelError> {
    if y.len() != channel.nr() {
        return Err(ChannelError::DimensionMismatch {
            expected: channel.nr(),
            found: y.len(),
        });
    }
    RealLinearSystem::new(channel.to_real_matrix(), stack_complex(y), sigma2)
}

/// `(Re v, Im v)` stacked.
pub fn stack_complex(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// Inverse of [`stack_complex`]. Panics on odd length.
pub fn unstack_complex(v: &[f64]) -> Vec<Complex64> {
    assert!(v.len().is_multiple_of(2), "odd-length real vector");
    let n = v.len() / 2;
    (0..n).map(|i| Complex64::new(v[i], v[i + n])).collect()
}
