//! Square QAM constellations viewed as real PAM alphabets.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModemError {
    #[error("constellation order {0} is not a power of four in 4..=4096")]
    UnsupportedOrder(usize),
    #[error("non-finite soft value at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("real symbol vector has odd length {0}")]
    OddLength(usize),
}

/// Real PAM alphabet of a unit-energy square QAM constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    levels: Vec<f64>,
    order: usize,
}

impl Constellation {
    /// Builds the `√M` PAM levels `(2i − √M + 1)/√(2(M−1)/3)` so that the
    /// complex constellation has unit mean energy.
    pub fn new(order: usize) -> Result<Self, ModemError> {
        let is_power_of_four = order.is_power_of_two() && order.trailing_zeros().is_multiple_of(2);
        if !(4..=4096).contains(&order) || !is_power_of_four {
            return Err(ModemError::UnsupportedOrder(order));
        }
        let m = 1usize << (order.trailing_zeros() / 2);
        let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let levels = (0..m).map(|i| (2.0 * i as f64 - (m as f64 - 1.0)) / scale).collect();
        Ok(Self { levels, order })
    }

    /// Sorted real alphabet.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Mean complex symbol energy (1 by construction).
    pub fn es(&self) -> f64 {
        1.0
    }

    /// Prior variance of one real dimension, `Es / 2`.
    pub fn per_dim_variance(&self) -> f64 {
        self.es() / 2.0
    }

    /// Nearest level to `v`; exact midpoints go to the smaller level.
    pub fn nearest(&self, v: f64) -> f64 {
        let idx = self.levels.partition_point(|&l| l < v);
        if idx == 0 {
            return self.levels[0];
        }
        if idx == self.levels.len() {
            return self.levels[idx - 1];
        }
        let (lo, hi) = (self.levels[idx - 1], self.levels[idx]);
        if hi - v < v - lo {
            hi
        } else {
            lo
        }
    }
}

/// Real symbol vector `(Re x, Im x)` of length `2Nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector(Vec<f64>);

impl SymbolVector {
    /// Wraps values that must all be members of `constellation`.
    pub fn new(values: Vec<f64>, constellation: &Constellation) -> Option<Self> {
        values
            .iter()
            .all(|v| constellation.levels().contains(v))
            .then_some(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// I.i.d. uniform draws over the PAM levels.
pub fn sample_symbols<R: Rng + ?Sized>(constellation: &Constellation, len: usize, rng: &mut R) -> SymbolVector {
    let levels = constellation.levels();
    SymbolVector((0..len).map(|_| levels[rng.random_range(0..levels.len())]).collect())
}

/// Per-entry nearest-level decision.
pub fn hard_decision(mu: &[f64], constellation: &Constellation) -> Result<SymbolVector, ModemError> {
    mu.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.is_finite() {
                Ok(constellation.nearest(v))
            } else {
                Err(ModemError::NonFinite(i))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(SymbolVector)
}

/// Counts complex-symbol errors. Entries `n` and `n + Nt` form one complex
/// symbol, which is wrong if either half differs. Returns `(errors, Nt)`.
pub fn count_symbol_errors(decided: &SymbolVector, truth: &SymbolVector) -> Result<(usize, usize), ModemError> {
    if decided.len() != truth.len() {
        return Err(ModemError::LengthMismatch(decided.len(), truth.len()));
    }
    if !decided.len().is_multiple_of(2) {
        return Err(ModemError::OddLength(decided.len()));
    }
    let nt = decided.len() / 2;
    let (d, t) = (decided.as_slice(), truth.as_slice());
    let errors = (0..nt).filter(|&n| d[n] != t[n] || d[n + nt] != t[n + nt]).count();
    Ok((errors, nt))
}
