//! Monte-Carlo trial generation and order-deterministic parallel evaluation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{sample_channel, ChannelError, RealLinearSystem, ScenarioConfig};
use crate::detectors::PreparedSystem;
use crate::linalg::Matrix;
use crate::modem::{sample_symbols, Constellation, SymbolVector};
use crate::rng::stream_rng;

/// One channel, symbol and noise realization. The noise is stored with unit
/// variance so the same trial can be replayed at any SNR.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: u64,
    /// Real channel matrix, `2Nr × 2Nt`.
    pub h: Matrix,
    pub symbols: SymbolVector,
    pub unit_noise: Vec<f64>,
}

impl Trial {
    /// Draws trial `index` from stream `index` of `seed`: channel first, then
    /// symbols, then noise.
    pub fn generate(
        scenario: &ScenarioConfig,
        constellation: &Constellation,
        seed: u64,
        index: u64,
    ) -> Result<Self, ChannelError> {
        let mut rng = stream_rng(seed, index);
        let channel = sample_channel(scenario.channel, scenario.nt, scenario.nr, &mut rng)?;
        let symbols = sample_symbols(constellation, 2 * scenario.nt, &mut rng);
        let unit_noise = (0..2 * scenario.nr).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            index,
            h: channel.to_real_matrix(),
            symbols,
            unit_noise,
        })
    }

    /// `y = H x + σ n` with per-dimension noise variance `sigma2`.
    pub fn system(&self, sigma2: f64) -> Result<RealLinearSystem, ChannelError> {
        let sigma = sigma2.sqrt();
        let mut y = self.h.matvec(self.symbols.as_slice());
        for (yi, n) in y.iter_mut().zip(&self.unit_noise) {
            *yi += sigma * n;
        }
        RealLinearSystem::new(self.h.clone(), y, sigma2)
    }

    /// SNR-independent products for replaying this trial at many SNRs.
    pub fn precompute(&self) -> TrialGram {
        let gram = self.h.gram();
        let gx = gram.matvec(self.symbols.as_slice());
        let htn = self.h.matvec_transposed(&self.unit_noise);
        TrialGram { gram, gx, htn }
    }

    /// FNV-1a over the bit patterns of every draw.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let values = self
            .h
            .as_slice()
            .iter()
            .chain(self.symbols.as_slice())
            .chain(&self.unit_noise);
        for v in values {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// `HᵀH`, `HᵀH x` and `Hᵀn` of one trial.
#[derive(Debug, Clone)]
pub struct TrialGram {
    gram: Matrix,
    gx: Vec<f64>,
    htn: Vec<f64>,
}

impl TrialGram {
    /// `σ⁻²HᵀH` and `σ⁻²Hᵀy` with `y = Hx + σn`.
    pub fn prepared(&self, sigma2: f64) -> PreparedSystem {
        let inv = 1.0 / sigma2;
        let sigma = sigma2.sqrt();
        let mut gram = self.gram.clone();
        gram.scale(inv);
        let matched = self
            .gx
            .iter()
            .zip(&self.htn)
            .map(|(g, n)| (g + sigma * n) * inv)
            .collect();
        PreparedSystem::from_parts(gram, matched).expect("square Gram matrix")
    }
}

/// Evaluates `f(0..n)` on `jobs` threads and returns results in index order.
/// `jobs == 0` uses every available core; `jobs == 1` stays on the caller's
/// thread.
pub fn par_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}
